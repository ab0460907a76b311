//! Training objectives: compressed-spectrum PHASEN loss, label-smoothed
//! cross-entropy and SI-SNR.

use crate::asr_model::TokenSequence;
use crate::autodiff::Var;
use crate::cnn::ComplexTensor;
use crate::dsp::{ComplexSpectrogram, Real, Waveform};
use crate::error::{Error, Result};

pub const PHASEN_P: f64 = 0.3;
/// Magnitude floor used in the derivative of `|·|ᵖ`.
pub const MAG_FLOOR: f64 = 1e-8;
pub const SI_SNR_CAP: f64 = 60.0;
pub const LABEL_SMOOTHING: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasenLossValue {
    pub total: f64,
    pub amplitude_part: f64,
    pub phase_part: f64,
}

/// In-graph PHASEN loss with both parts kept for logging.
#[derive(Clone)]
pub struct PhasenLoss {
    pub total: Var,
    pub amplitude_part: Var,
    pub phase_part: Var,
}

impl PhasenLoss {
    pub fn value(&self) -> PhasenLossValue {
        PhasenLossValue {
            total: self.total.item(),
            amplitude_part: self.amplitude_part.item(),
            phase_part: self.phase_part.item(),
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("compression exponent {p} outside (0, 1]")))
    }
}

/// `(|z|ᵖ, Re(|z|ᵖe^{jφ}), Im(|z|ᵖe^{jφ}))` with phase 0 at the origin.
fn compressed(re: f64, im: f64, p: f64) -> (f64, f64, f64) {
    let m = re.hypot(im);
    if m == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let c = m.powf(p);
    (c, re * c / m, im * c / m)
}

/// `L_a = mean (|S|ᵖ − |Ŝ|ᵖ)²`, `L_p = mean ||S|ᵖe^{jφ(S)} − |Ŝ|ᵖe^{jφ(Ŝ)}|²`.
pub fn phasen_loss<T: Real>(
    est: &ComplexSpectrogram<T>,
    reference: &ComplexSpectrogram<T>,
    p: f64,
) -> Result<PhasenLossValue> {
    check_p(p)?;
    if !est.same_shape(reference) {
        return Err(Error::shape(
            "phasen_loss",
            format!(
                "{}×{} vs {}×{}",
                est.frames(),
                est.bins(),
                reference.frames(),
                reference.bins()
            ),
        ));
    }
    let n = est.real().len();
    let (mut la, mut lp) = (0.0, 0.0);
    for i in 0..n {
        let (ma, ra, ia) = compressed(est.real()[i].as_f64(), est.imag()[i].as_f64(), p);
        let (mb, rb, ib) = compressed(reference.real()[i].as_f64(), reference.imag()[i].as_f64(), p);
        la += (mb - ma).powi(2);
        lp += (rb - ra).powi(2) + (ib - ia).powi(2);
    }
    let (la, lp) = (la / n as f64, lp / n as f64);
    Ok(PhasenLossValue {
        total: la + lp,
        amplitude_part: la,
        phase_part: lp,
    })
}

/// Differentiable PHASEN loss averaged over every element of the (equally
/// shaped) complex tensors.
pub fn phasen_loss_graph(est: &ComplexTensor, reference: &ComplexTensor, p: f64) -> Result<PhasenLoss> {
    check_p(p)?;
    if est.shape() != reference.shape() {
        return Err(Error::shape(
            "phasen_loss",
            format!("{:?} vs {:?}", est.shape(), reference.shape()),
        ));
    }
    let mag = |z: &ComplexTensor| Var::mag_pow(&z.re, &z.im, p, MAG_FLOOR);
    let part = |z: &ComplexTensor, imag| Var::compress(&z.re, &z.im, p, MAG_FLOOR, imag);
    let amplitude_part = mag(reference)?.sub(&mag(est)?)?.square().mean();
    let dr = part(reference, false)?.sub(&part(est, false)?)?;
    let di = part(reference, true)?.sub(&part(est, true)?)?;
    let phase_part = dr.square().add(&di.square())?.mean();
    Ok(PhasenLoss {
        total: amplitude_part.add(&phase_part)?,
        amplitude_part,
        phase_part,
    })
}

/// Mean over positions of the cross-entropy between `softmax(logits)` and
/// `(1 − smoothing)·onehot + smoothing/V`. `logits` is `len(reference) × V`.
pub fn label_smoothed_ce(logits: &Var, reference: &TokenSequence, smoothing: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let s = logits.shape();
    if s.len() != 2 || s[0] != reference.len() {
        return Err(Error::Contract(format!(
            "logits {s:?} do not match a reference of {} tokens",
            reference.len()
        )));
    }
    let (rows, v) = (s[0], s[1]);
    let mut target = vec![smoothing / v as f64; rows * v];
    for (r, &id) in reference.ids().iter().enumerate() {
        if id >= v {
            return Err(Error::Token { id, vocab: v });
        }
        target[r * v + id] += 1.0 - smoothing;
    }
    let target = logits.graph().constant(&[rows, v], target)?;
    Ok(logits.log_softmax()?.mul(&target)?.sum().scale(-1.0 / rows as f64))
}

/// Scale-invariant SNR in dB after mean removal, capped at +60 dB.
pub fn si_snr<T: Real>(est: &Waveform<T>, reference: &Waveform<T>) -> Result<f64> {
    si_snr_slices(&est.to_f64(), &reference.to_f64())
}

pub fn si_snr_slices(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape(
            "si_snr",
            format!("{} vs {} samples", est.len(), reference.len()),
        ));
    }
    let centred = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len().max(1) as f64;
        x.iter().map(|v| v - m).collect::<Vec<f64>>()
    };
    let (e, r) = (centred(est), centred(reference));
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 || !rr.is_finite() {
        return Err(Error::Domain("SI-SNR needs a nonzero, finite reference".into()));
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = e.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    if noise == 0.0 {
        return Ok(SI_SNR_CAP);
    }
    if target == 0.0 {
        return Ok(-SI_SNR_CAP);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SNR_CAP, SI_SNR_CAP))
}
