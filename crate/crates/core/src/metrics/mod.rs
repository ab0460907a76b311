//! Evaluation-only metrics: SI-SDR, projection SDR, STOI and token error
//! rate, plus the tabular evaluation report.

mod error_rate;
mod report;
mod stoi;

pub use error_rate::{error_rate, levenshtein, EditCounts};
pub use report::{EvalReport, EvalRow, SystemSummary, ROW_COLUMNS, SUMMARY_COLUMNS};
pub use stoi::{resample, stoi, STOI_RATE};

use crate::dsp::{Real, Waveform};
use crate::error::{Error, Result};
use crate::losses::{si_snr, SI_SNR_CAP};

/// Scale-invariant SDR (mean-removed), capped at ±60 dB.
pub fn si_sdr<T: Real>(est: &Waveform<T>, reference: &Waveform<T>) -> Result<f64> {
    si_snr(est, reference)
}

/// Projection SDR: the reference scaled by the least-squares gain is the
/// target, everything else is distortion. Capped at ±60 dB.
pub fn sdr<T: Real>(est: &Waveform<T>, reference: &Waveform<T>) -> Result<f64> {
    let (e, r) = (est.to_f64(), reference.to_f64());
    if e.len() != r.len() {
        return Err(Error::shape("sdr", format!("{} vs {} samples", e.len(), r.len())));
    }
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 || !rr.is_finite() {
        return Err(Error::Domain("SDR needs a nonzero, finite reference".into()));
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = e.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    if residual == 0.0 {
        return Ok(SI_SNR_CAP);
    }
    if target == 0.0 {
        return Ok(-SI_SNR_CAP);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SNR_CAP, SI_SNR_CAP))
}

/// Relative change `100·(before − after)/before` in percent.
pub fn relative_improvement(before: f64, after: f64) -> Result<f64> {
    if before == 0.0 || !before.is_finite() || !after.is_finite() {
        return Err(Error::Domain(format!("relative improvement from {before} to {after} is undefined")));
    }
    Ok(100.0 * (before - after) / before)
}
