use crate::dsp::{ComplexSpectrogram, Real};
use crate::error::{Error, Result};

/// Denominator floor for the ideal ratio mask.
pub const CRM_FLOOR: f64 = 1e-10;

/// Complex ratio mask, `frames × bins` row-major like the spectrogram it
/// masks.
#[derive(Clone, Debug, PartialEq)]
pub struct CRMask {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

impl CRMask {
    pub fn new(real: Vec<f64>, imag: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if real.len() != frames * bins || imag.len() != frames * bins {
            return Err(Error::shape(
                "crmask",
                format!("{}/{} values for {frames}×{bins}", real.len(), imag.len()),
            ));
        }
        Ok(Self {
            real,
            imag,
            frames,
            bins,
        })
    }

    /// Constant mask `re + j·im`.
    pub fn constant(re: f64, im: f64, frames: usize, bins: usize) -> Self {
        Self {
            real: vec![re; frames * bins],
            imag: vec![im; frames * bins],
            frames,
            bins,
        }
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.real.iter().zip(&self.imag).map(|(r, i)| r.hypot(*i))
    }
}

/// `CRM = (Y_r S_r + Y_i S_i)/|Y|² + j (Y_r S_i − Y_i S_r)/|Y|²`, with `|Y|²`
/// floored.
pub fn crm_ideal<T: Real>(noisy: &ComplexSpectrogram<T>, clean: &ComplexSpectrogram<T>) -> Result<CRMask> {
    if !noisy.same_shape(clean) {
        return Err(Error::shape(
            "crm_ideal",
            format!("{}×{} vs {}×{}", noisy.frames(), noisy.bins(), clean.frames(), clean.bins()),
        ));
    }
    let n = noisy.real().len();
    let mut real = Vec::with_capacity(n);
    let mut imag = Vec::with_capacity(n);
    for i in 0..n {
        let (yr, yi) = (noisy.real()[i].as_f64(), noisy.imag()[i].as_f64());
        let (sr, si) = (clean.real()[i].as_f64(), clean.imag()[i].as_f64());
        let den = (yr * yr + yi * yi).max(CRM_FLOOR);
        real.push((yr * sr + yi * si) / den);
        imag.push((yr * si - yi * sr) / den);
    }
    CRMask::new(real, imag, noisy.frames(), noisy.bins())
}

/// Pointwise complex product `mask ⊙ noisy`.
pub fn apply_mask<T: Real>(mask: &CRMask, noisy: &ComplexSpectrogram<T>) -> Result<ComplexSpectrogram<T>> {
    if mask.frames != noisy.frames() || mask.bins != noisy.bins() {
        return Err(Error::shape(
            "apply_mask",
            format!("mask {}×{} vs spectrogram {}×{}", mask.frames, mask.bins, noisy.frames(), noisy.bins()),
        ));
    }
    let mut out = noisy.clone();
    for i in 0..mask.real.len() {
        let (yr, yi) = (noisy.real()[i].as_f64(), noisy.imag()[i].as_f64());
        let (mr, mi) = (mask.real[i], mask.imag[i]);
        out.real_mut()[i] = T::of(mr * yr - mi * yi);
        out.imag_mut()[i] = T::of(mr * yi + mi * yr);
    }
    Ok(out)
}
