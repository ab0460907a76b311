//! SE pre-training, ASR pre-training, the alternating multi-task loop,
//! evaluation and the SE-step probability sweep.

mod data;
mod eval;
mod loops;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{AsrItem, SeBatch, SeTrainData};
pub use eval::{evaluate, sweep_se_probability, SweepRow, NOISY_SYSTEM, SWEEP_COLUMNS};
pub use loops::{asr_step_loss, mtl_train, pretrain_asr, pretrain_se, se_step_loss, TrainOutcome};

use crate::error::{Error, Result};

/// Global gradient-norm ceiling applied before every update.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub iterations: usize,
    /// Mixtures per SE-step (and utterances per ASR pre-training step).
    pub batch_size: usize,
    /// Utterances per multi-task ASR-step.
    pub asr_batch_size: usize,
    pub learning_rate: f64,
    pub se_step_probability: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Compute the validation loss every this many iterations; 0 disables.
    pub eval_every: usize,
    /// Length of the random SE training crops.
    pub crop_seconds: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 4,
            asr_batch_size: 1,
            learning_rate: 1e-3,
            se_step_probability: 0.5,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            crop_seconds: 0.5,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.batch_size == 0 || self.asr_batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.se_step_probability) {
            return fail(format!("se_step_probability {} outside [0, 1]", self.se_step_probability));
        }
        if !(self.crop_seconds > 0.0 && self.crop_seconds.is_finite()) {
            return fail(format!("crop_seconds {} must be positive", self.crop_seconds));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepKind {
    Se,
    Asr,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Se => "SE",
            StepKind::Asr => "ASR",
        }
    }
}

/// One optimizer update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub iteration: usize,
    pub kind: StepKind,
    pub loss: f64,
    /// Global gradient norm of the updated parameters before clipping.
    pub grad_norm: f64,
}

pub const STEP_LOG_COLUMNS: [&str; 4] = ["iteration", "kind", "loss", "grad_norm"];

/// Tab-separated step log with a header line.
pub fn step_log_tsv(logs: &[StepLog]) -> String {
    let mut out = STEP_LOG_COLUMNS.join("\t");
    out.push('\n');
    for l in logs {
        let _ = writeln!(out, "{}\t{}\t{:.6e}\t{:.6e}", l.iteration, l.kind.name(), l.loss, l.grad_norm);
    }
    out
}

pub fn save_step_log(path: impl AsRef<Path>, logs: &[StepLog]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, step_log_tsv(logs)).map_err(|e| Error::io(path, e))
}

/// Stream of the step-kind generator, kept apart from data sampling so the
/// kind sequence depends on the seed alone.
const KIND_STREAM: u64 = 1;

/// Generator of the per-iteration Bernoulli draws.
pub struct StepSelector {
    rng: ChaCha8Rng,
    p: f64,
}

impl StepSelector {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("se_step_probability {p} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(KIND_STREAM);
        Ok(Self { rng, p })
    }

    pub fn next_kind(&mut self) -> StepKind {
        if self.rng.gen_bool(self.p) {
            StepKind::Se
        } else {
            StepKind::Asr
        }
    }
}

/// The first `n` step kinds drawn for `(p, seed)`.
pub fn step_kinds(p: f64, seed: u64, n: usize) -> Result<Vec<StepKind>> {
    let mut s = StepSelector::new(p, seed)?;
    Ok((0..n).map(|_| s.next_kind()).collect())
}

/// Data-sampling generator for `seed`, independent of the kind stream.
pub(crate) fn data_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(KIND_STREAM + 1 + stream);
    rng
}
