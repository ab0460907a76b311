use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use super::data::{AsrItem, SeBatch, SeTrainData};
use super::{data_rng, StepKind, StepLog, StepSelector, TrainSchedule, CLIP_NORM};
use crate::asr_model::{AsrInput, AsrModel};
use crate::autodiff::{clip_grad_norm, Adam, AdamConfig, Bound, Graph, ParamStore, Var};
use crate::cnn::BufferUpdate;
use crate::dsp::{stft, MelFeatures, MvnStats, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::losses::{label_smoothed_ce, phasen_loss_graph, PhasenLoss, LABEL_SMOOTHING, PHASEN_P};
use crate::se_model::{spectrogram_tensor, SeModel};

/// Step history plus the validation losses taken along the way.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub steps: Vec<StepLog>,
    /// `(iteration, loss)`; iteration 0 is the untrained model.
    pub validation: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn count(&self, kind: StepKind) -> usize {
        self.steps.iter().filter(|s| s.kind == kind).count()
    }
}

const SE_STREAM: u64 = 0;
const ASR_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const VALIDATION_BATCH: usize = 8;

/// PHASEN loss of the enhanced batch against its references.
pub fn se_step_loss(
    model: &SeModel,
    p: &Bound,
    g: &Graph,
    batch: &SeBatch,
    training: bool,
) -> Result<(PhasenLoss, Vec<BufferUpdate>)> {
    let sp = model.config().stft;
    let noisy = batch.iter().map(|(n, _)| stft(n, &sp)).collect::<Result<Vec<_>>>()?;
    let clean = batch.iter().map(|(_, r)| stft(r, &sp)).collect::<Result<Vec<_>>>()?;
    let x = spectrogram_tensor(g, &noisy)?;
    let s = spectrogram_tensor(g, &clean)?;
    let (est, updates) = model.enhance_spectrum(p, &x, training)?;
    Ok((phasen_loss_graph(&est, &s, PHASEN_P)?, updates))
}

/// Mean label-smoothed CE of the recognizer on enhanced utterances.
pub fn asr_step_loss(se: &SeModel, sp: &Bound, asr: &AsrModel, g: &Graph, items: &[&AsrItem]) -> Result<Var> {
    let ap = asr.params().bind(g);
    let mut total: Option<Var> = None;
    for item in items {
        let y = se.enhance_graph(sp, g, &item.audio)?;
        let logits = asr.forward(&ap, AsrInput::Waveform(&y), &item.tokens)?;
        let ce = label_smoothed_ce(&logits, &item.tokens, LABEL_SMOOTHING)?;
        total = Some(match total {
            Some(t) => t.add(&ce)?,
            None => ce,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty ASR batch".into()))?;
    Ok(total.scale(1.0 / items.len() as f64))
}

fn crop_len(schedule: &TrainSchedule) -> usize {
    (schedule.crop_seconds * CANONICAL_RATE as f64).round() as usize
}

/// Backpropagates `loss`, clips, and applies one Adam update. Returns the
/// pre-clip gradient norm, or a divergence error without touching the
/// parameters when the loss or gradient is not finite.
fn update(
    store: &mut ParamStore,
    bound: &Bound,
    loss: &Var,
    adam: &mut Adam,
    iteration: usize,
    last_good: &dyn Fn(&ParamStore) -> Option<PathBuf>,
) -> Result<f64> {
    let value = loss.item();
    let diverged = |store: &ParamStore| Error::Diverged {
        iteration,
        last_good: last_good(store),
    };
    if !value.is_finite() {
        return Err(diverged(store));
    }
    let grads = loss.backward()?;
    store.zero_grad();
    store.accumulate_grads(bound, &grads);
    let norm = clip_grad_norm(store, CLIP_NORM);
    if !norm.is_finite() {
        store.zero_grad();
        return Err(diverged(store));
    }
    adam.step(store);
    Ok(norm)
}

fn save_last_good(out: Option<&Path>, store: &ParamStore) -> Option<PathBuf> {
    let dir = out?;
    let path = dir.join("last_good.ckpt");
    crate::autodiff::checkpoint::save(&path, store).ok().map(|_| path)
}

fn validation_loss(model: &SeModel, batch: &SeBatch) -> Result<f64> {
    let g = Graph::new();
    let p = model.params().bind(&g);
    Ok(se_step_loss(model, &p, &g, batch, false)?.0.total.item())
}

/// Alternating SE/ASR training of `se`. With `asr == None` every step is an
/// SE-step regardless of the schedule's probability.
fn run(
    se: &mut SeModel,
    se_data: &SeTrainData,
    asr: Option<(&AsrModel, &[AsrItem])>,
    schedule: &TrainSchedule,
    out: Option<&Path>,
    label: &str,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if schedule.batch_size < 2 {
        return Err(Error::Config("SE-steps need at least two mixtures per batch".into()));
    }
    if let Some((model, items)) = asr {
        if !model.is_frozen() {
            return Err(Error::Contract("the recognizer must be frozen before multi-task training".into()));
        }
        if items.is_empty() {
            return Err(Error::Config("ASR-step manifest is empty".into()));
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let p = if asr.is_some() { schedule.se_step_probability } else { 1.0 };
    let mut kinds = StepSelector::new(p, schedule.seed)?;
    let mut se_rng = data_rng(schedule.seed, SE_STREAM);
    let mut asr_rng = data_rng(schedule.seed, ASR_STREAM);
    let crop = crop_len(schedule);
    let validation = if schedule.eval_every > 0 {
        let mut rng = data_rng(schedule.seed, VALIDATION_STREAM);
        Some(se_data.sample(&mut rng, VALIDATION_BATCH, crop)?)
    } else {
        None
    };
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: schedule.learning_rate,
            ..AdamConfig::default()
        },
        se.params(),
    );
    let mut outcome = TrainOutcome::default();
    if let Some(v) = &validation {
        outcome.validation.push((0, validation_loss(se, v)?));
    }
    let started = Instant::now();
    let last_good = |s: &ParamStore| save_last_good(out, s);
    for it in 1..=schedule.iterations {
        let kind = kinds.next_kind();
        let g = Graph::new();
        let bound = se.params().bind(&g);
        let (loss, updates) = match (kind, asr) {
            (StepKind::Se, _) | (StepKind::Asr, None) => {
                let batch = se_data.sample(&mut se_rng, schedule.batch_size, crop)?;
                let (l, u) = se_step_loss(se, &bound, &g, &batch, true)?;
                (l.total, u)
            }
            (StepKind::Asr, Some((model, items))) => {
                let picked: Vec<&AsrItem> = (0..schedule.asr_batch_size)
                    .map(|_| &items[asr_rng.gen_range(0..items.len())])
                    .collect();
                (asr_step_loss(se, &bound, model, &g, &picked)?, Vec::new())
            }
        };
        let value = loss.item();
        let grad_norm = update(se.params_mut(), &bound, &loss, &mut adam, it, &last_good)?;
        BufferUpdate::apply(&updates, se.params_mut());
        outcome.steps.push(StepLog {
            iteration: it,
            kind,
            loss: value,
            grad_norm,
        });
        if let Some(v) = &validation {
            if it % schedule.eval_every == 0 {
                let l = validation_loss(se, v)?;
                log::info!("{label} iteration {it}: validation loss {l:.5}");
                outcome.validation.push((it, l));
            }
        }
        if let Some(dir) = out {
            if schedule.checkpoint_every > 0 && it % schedule.checkpoint_every == 0 {
                se.save(dir.join(format!("{label}_{it:06}.ckpt")))?;
            }
        }
        if it % 100 == 0 || it == schedule.iterations {
            log::info!(
                "{label} iteration {it}/{}: {} loss {value:.5} ({:.1}s)",
                schedule.iterations,
                kind.name(),
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(outcome)
}

/// Minimizes the PHASEN loss on SE mixtures. With `out` set, periodic
/// checkpoints and a last-good checkpoint on divergence go there.
pub fn pretrain_se(
    model: &mut SeModel,
    data: &SeTrainData,
    schedule: &TrainSchedule,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    run(model, data, None, schedule, out, "se")
}

/// Multi-task fine-tuning: each iteration draws an SE-step with the
/// schedule's probability, otherwise an ASR-step through the frozen
/// recognizer. One optimizer state serves both step kinds.
pub fn mtl_train(
    se: &mut SeModel,
    asr: &AsrModel,
    se_data: &SeTrainData,
    asr_items: &[AsrItem],
    schedule: &TrainSchedule,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    run(se, se_data, Some((asr, asr_items)), schedule, out, "mtl")
}

/// Trains the recognizer with label-smoothed CE on precomputed features
/// (multi-condition when `items` mixes clean and noisy audio). Global
/// normalization statistics are estimated from `items` first. The model is
/// frozen on return.
pub fn pretrain_asr(model: &mut AsrModel, items: &[AsrItem], schedule: &TrainSchedule) -> Result<TrainOutcome> {
    schedule.validate()?;
    if items.is_empty() {
        return Err(Error::Config("ASR pre-training needs at least one utterance".into()));
    }
    let raw = items.iter().map(|i| model.raw_features(&i.audio)).collect::<Result<Vec<_>>>()?;
    model.set_mvn(&MvnStats::estimate(&raw)?)?;
    let feats: Vec<MelFeatures<f64>> = raw
        .iter()
        .map(|f| crate::dsp::global_mvn(f, &model.mvn()))
        .collect::<Result<_>>()?;
    model.set_frozen(false);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: schedule.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut rng = data_rng(schedule.seed, ASR_STREAM);
    let mut outcome = TrainOutcome::default();
    let started = Instant::now();
    let result = (|| {
        for it in 1..=schedule.iterations {
            let g = Graph::new();
            let p = model.params().bind(&g);
            let mut total: Option<Var> = None;
            for _ in 0..schedule.batch_size {
                let k = rng.gen_range(0..items.len());
                let f = g.constant(&[feats[k].frames(), feats[k].dims()], feats[k].values().to_vec())?;
                let logits = model.forward(&p, AsrInput::Features(&f), &items[k].tokens)?;
                let ce = label_smoothed_ce(&logits, &items[k].tokens, LABEL_SMOOTHING)?;
                total = Some(match total {
                    Some(t) => t.add(&ce)?,
                    None => ce,
                });
            }
            let loss = total.expect("batch is non-empty").scale(1.0 / schedule.batch_size as f64);
            let value = loss.item();
            let grad_norm = update(model.params_mut(), &p, &loss, &mut adam, it, &|_| None)?;
            outcome.steps.push(StepLog {
                iteration: it,
                kind: StepKind::Asr,
                loss: value,
                grad_norm,
            });
            if it % 100 == 0 || it == schedule.iterations {
                log::info!(
                    "asr iteration {it}/{}: loss {value:.5} ({:.1}s)",
                    schedule.iterations,
                    started.elapsed().as_secs_f64()
                );
            }
        }
        Ok(())
    })();
    model.set_frozen(true);
    result.map(|_| outcome)
}
