//! STFT and ISTFT as differentiable graph operations, numerically matching
//! [`super::stft`] and [`super::istft`].

use super::StftParams;
use crate::autodiff::Var;
use crate::error::{Error, Result};

/// `B×L` waveforms to `(real, imag)`, each `B×frames×bins`.
pub fn stft_graph(x: &Var, p: &StftParams) -> Result<(Var, Var)> {
    p.validate()?;
    let n = p.fft_size;
    let g = x.graph();
    let window = g.constant(&[n], p.window.coefficients(n))?;
    let spec = x.frame(n, p.hop)?.mul(&window)?.rdft()?;
    let k = p.bins();
    Ok((spec.slice(2, 0, k)?, spec.slice(2, k, k)?))
}

/// Weighted overlap-add synthesis of `B×frames×bins` spectra, returning
/// `B×((frames − 1)·hop + fft_size)` samples.
pub fn istft_graph(re: &Var, im: &Var, p: &StftParams) -> Result<Var> {
    p.validate()?;
    if !p.is_cola() {
        return Err(Error::Config(format!(
            "{:?} window with hop {} of {} violates constant overlap-add",
            p.window, p.hop, p.fft_size
        )));
    }
    let s = re.shape();
    if s.len() != 3 || s[2] != p.bins() || s[1] == 0 {
        return Err(Error::shape("istft_graph", format!("{s:?} for {} bins", p.bins())));
    }
    let n = p.fft_size;
    let frames = s[1];
    let g = re.graph();
    let window = p.window.coefficients(n);
    let frames_t = g.concat(&[re.clone(), im.clone()], 2)?.irdft(n)?;
    let w = g.constant(&[n], window.clone())?;
    let y = frames_t.mul(&w)?.overlap_add(p.hop)?;
    let len = (frames - 1) * p.hop + n;
    let mut env = vec![0.0; len];
    for t in 0..frames {
        for i in 0..n {
            env[t * p.hop + i] += window[i] * window[i];
        }
    }
    let peak = env.iter().cloned().fold(0.0, f64::max);
    let inv: Vec<f64> = env
        .iter()
        .map(|&e| if e > 1e-8 * peak { 1.0 / e } else { 0.0 })
        .collect();
    y.mul(&g.constant(&[len], inv)?)
}
