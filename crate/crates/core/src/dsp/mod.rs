//! Deterministic signal processing: windows, STFT/ISTFT, mel features,
//! frame stacking, global mean-variance normalization and WAV I/O.
//!
//! Everything here is generic over [`Real`] so the same code runs in 32-bit
//! (default) and 64-bit (verification) precision.

mod graph;
mod mel;
mod stft;
pub mod wav;

use std::fmt::Debug;

pub use graph::{istft_graph, stft_graph};
pub use mel::{global_mvn, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, stack_frames, MelFeatures, MvnStats, LOG_FLOOR};
pub use stft::{istft, stft, ComplexSpectrogram, StftParams, Window};

use crate::error::{Error, Result};

/// Floating-point sample type accepted by the DSP routines.
pub trait Real: num_traits::Float + rustfft::FftNum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub const CANONICAL_RATE: u32 = 16_000;

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T = f32> {
    samples: Vec<T>,
    sample_rate: u32,
}

impl<T: Real> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&v| T::of(v)).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Real>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|v| U::of(v.as_f64())).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / self.samples.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(Waveform::<f32>::new(vec![0.0, f32::NAN], 16_000).is_err());
        assert!(Waveform::<f32>::new(vec![0.0], 0).is_err());
        let w = Waveform::<f64>::new(vec![0.5; 8000], 16_000).unwrap();
        assert_eq!(w.duration(), 0.5);
        assert!((w.power() - 0.25).abs() < 1e-12);
    }
}
