use std::path::Path;

use super::data::{AsrItem, SeTrainData};
use super::loops::mtl_train;
use super::{save_step_log, StepKind, TrainSchedule};
use crate::asr_model::AsrModel;
use crate::datasim::{Manifest, ManifestRecord};
use crate::dsp::wav::read_wav;
use crate::dsp::Real;
use crate::error::{Error, Result};
use crate::metrics::{error_rate, sdr, si_sdr, stoi, EvalReport, EvalRow};
use crate::se_model::SeModel;

/// System label of the unprocessed input.
pub const NOISY_SYSTEM: &str = "noisy";

fn eval_record<T: Real>(
    system: &str,
    se: Option<&SeModel>,
    asr: &AsrModel,
    manifest: &Manifest,
    r: &ManifestRecord,
) -> Result<EvalRow> {
    let noisy = read_wav::<T>(manifest.audio_path(r))?;
    let est = match se {
        Some(m) => m.enhance(&noisy)?,
        None => noisy,
    };
    let (si, sd, st) = match manifest.reference_path(r) {
        Some(p) => {
            let reference = read_wav::<T>(p)?;
            let st = match stoi(&est, &reference) {
                Ok(v) => Some(v),
                Err(Error::Domain(_)) => None,
                Err(e) => return Err(e),
            };
            (Some(si_sdr(&est, &reference)?), Some(sdr(&est, &reference)?), st)
        }
        None => (None, None, None),
    };
    let decoded = asr.decode_greedy(&est)?;
    let (_, edits) = error_rate(&r.transcript, &decoded.tokens)?;
    Ok(EvalRow {
        system: system.to_string(),
        id: r.id.clone(),
        si_sdr: si,
        sdr: sd,
        stoi: st,
        edits,
        ref_tokens: r.transcript.content().len(),
        truncated: decoded.truncated,
        hypothesis: asr.vocab().decode(&decoded.tokens),
    })
}

/// Enhances every record with each system (`None` passes the input
/// through) and scores signal metrics against the clean references where
/// the manifest has them, and token errors of greedy decoding always.
/// A noisy-input row set is prepended. Records are split across `threads`
/// workers; the result does not depend on the thread count.
pub fn evaluate<T: Real>(
    systems: &[(&str, &SeModel)],
    asr: &AsrModel,
    manifest: &Manifest,
    threads: usize,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Config("evaluation manifest is empty".into()));
    }
    let mut all: Vec<(&str, Option<&SeModel>)> = vec![(NOISY_SYSTEM, None)];
    all.extend(systems.iter().map(|&(n, m)| (n, Some(m))));
    if let Some(dup) = all.iter().enumerate().find(|(i, (n, _))| all[..*i].iter().any(|(m, _)| m == n)) {
        return Err(Error::Config(format!("duplicate system name {}", dup.1 .0)));
    }
    let jobs: Vec<(usize, usize)> = (0..all.len())
        .flat_map(|s| (0..manifest.len()).map(move |r| (s, r)))
        .collect();
    let threads = threads.clamp(1, jobs.len());
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<Vec<EvalRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                let all = &all;
                scope.spawn(move || {
                    part.iter()
                        .map(|&(s, r)| eval_record::<T>(all[s].0, all[s].1, asr, manifest, &manifest.records[r]))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(EvalReport::new(rows))
}

/// One line of the SE-step probability trade-off table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub se_step_probability: f64,
    pub ter_pct: f64,
    pub si_sdr: Option<f64>,
    pub se_steps: usize,
    pub asr_steps: usize,
}

pub const SWEEP_COLUMNS: [&str; 5] = ["se_step_probability", "ter_pct", "si_sdr_db", "se_steps", "asr_steps"];

impl SweepRow {
    pub fn tsv(rows: &[SweepRow]) -> String {
        let mut out = SWEEP_COLUMNS.join("\t");
        out.push('\n');
        for r in rows {
            out.push_str(&format!(
                "{}\t{:.2}\t{}\t{}\t{}\n",
                r.se_step_probability,
                r.ter_pct,
                r.si_sdr.map_or_else(|| "-".to_string(), |v| format!("{v:.4}")),
                r.se_steps,
                r.asr_steps
            ));
        }
        out
    }
}

/// Runs [`mtl_train`] from the same seed model for every probability and
/// evaluates each result on `test`. With `out` set, each run writes
/// `p<prob>/mtl.ckpt` and `p<prob>/steps.tsv` there.
#[allow(clippy::too_many_arguments)]
pub fn sweep_se_probability(
    probabilities: &[f64],
    seed_model: &SeModel,
    asr: &AsrModel,
    se_data: &SeTrainData,
    asr_items: &[AsrItem],
    test: &Manifest,
    schedule: &TrainSchedule,
    out: Option<&Path>,
    threads: usize,
) -> Result<(Vec<SweepRow>, Vec<SeModel>)> {
    if probabilities.len() < 2 {
        return Err(Error::Config("a sweep needs at least two probabilities".into()));
    }
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for &p in probabilities {
        let mut model = seed_model.clone();
        let sched = TrainSchedule {
            se_step_probability: p,
            ..schedule.clone()
        };
        let dir = out.map(|d| d.join(format!("p{p:.2}")));
        let outcome = mtl_train(&mut model, asr, se_data, asr_items, &sched, dir.as_deref())?;
        if let Some(d) = &dir {
            model.save(d.join("mtl.ckpt"))?;
            save_step_log(d.join("steps.tsv"), &outcome.steps)?;
        }
        let name = format!("p{p:.2}");
        let report = evaluate::<f64>(&[(name.as_str(), &model)], asr, test, threads)?;
        let s = report.summary(&name).expect("system evaluated");
        rows.push(SweepRow {
            se_step_probability: p,
            ter_pct: s.ter_pct,
            si_sdr: s.si_sdr,
            se_steps: outcome.count(StepKind::Se),
            asr_steps: outcome.count(StepKind::Asr),
        });
        models.push(model);
    }
    Ok((rows, models))
}
