use crate::dsp::Waveform;
use crate::error::{Error, Result};

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10·log10(P_signal / P_noise)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// Adds `scale·noise` (first `len(clean)` samples) to `clean` with
/// `scale = sqrt(P_clean / (P_noise·10^(snr/10)))`.
pub fn mix_at_snr(clean: &Waveform<f64>, noise: &Waveform<f64>, snr_db: f64) -> Result<(Waveform<f64>, f64)> {
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("SNR {snr_db} dB is not finite")));
    }
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::Config(format!(
            "clean at {} Hz, noise at {} Hz",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if noise.len() < clean.len() {
        return Err(Error::Length {
            got: noise.len(),
            need: clean.len(),
        });
    }
    let c = clean.samples();
    let n = &noise.samples()[..c.len()];
    let (pc, pn) = (power(c), power(n));
    if pc == 0.0 || pn == 0.0 {
        return Err(Error::Domain("cannot mix with a silent clean or noise signal".into()));
    }
    let scale = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let noisy = c.iter().zip(n).map(|(a, b)| a + scale * b).collect();
    Ok((Waveform::new(noisy, clean.sample_rate())?, scale))
}

/// `len` samples of `noise` starting at `offset`.
pub fn crop(noise: &Waveform<f64>, offset: usize, len: usize) -> Result<Waveform<f64>> {
    if offset + len > noise.len() {
        return Err(Error::Length {
            got: noise.len(),
            need: offset + len,
        });
    }
    Waveform::new(noise.samples()[offset..offset + len].to_vec(), noise.sample_rate())
}

/// Convolution truncated to `len(x)` with the largest RIR tap at lag 0.
pub fn convolve_rir(x: &Waveform<f64>, rir: &Waveform<f64>) -> Result<Waveform<f64>> {
    let h = rir.samples();
    if h.is_empty() {
        return Err(Error::Domain("empty impulse response".into()));
    }
    if h.len() >= x.len() {
        return Err(Error::Domain(format!(
            "impulse response of {} taps is not shorter than the {}-sample signal",
            h.len(),
            x.len()
        )));
    }
    let peak = h
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
        .0;
    let xs = x.samples();
    let n = xs.len();
    let mut y = vec![0.0; n];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        // y[t] += h[k]·x[t + peak − k]
        for t in k.saturating_sub(peak)..n {
            let src = t + peak - k;
            if src >= n {
                break;
            }
            y[t] += hk * xs[src];
        }
    }
    Waveform::new(y, x.sample_rate())
}
