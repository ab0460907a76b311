use super::{ComplexSpectrogram, Real};
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank spanning 0 Hz to Nyquist, as an
/// `n_mels × (fft_size/2 + 1)` row-major matrix.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Vec<f64> {
    let bins = fft_size / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
            if w > 0.0 {
                fb[m * bins + k] = w;
            }
        }
    }
    fb
}

/// Row-major `frames × dims` feature matrix (natural-log energies).
#[derive(Clone, Debug, PartialEq)]
pub struct MelFeatures<T = f32> {
    values: Vec<T>,
    frames: usize,
    dims: usize,
    /// seconds
    frame_shift: f64,
}

impl<T: Real> MelFeatures<T> {
    pub fn new(values: Vec<T>, frames: usize, dims: usize, frame_shift: f64) -> Result<Self> {
        if values.len() != frames * dims {
            return Err(Error::shape("mel_features", format!("{frames}×{dims} vs {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(Self {
            values,
            frames,
            dims,
            frame_shift,
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }
}

/// `ln(max(|X|² · melᵀ, floor))` per frame.
pub fn log_mel<T: Real>(s: &ComplexSpectrogram<T>, n_mels: usize) -> Result<MelFeatures<T>> {
    let bins = s.bins();
    if n_mels == 0 || n_mels >= bins {
        return Err(Error::Config(format!("n_mels {n_mels} must be in [1, {bins})")));
    }
    let p = s.params();
    let fb = mel_filterbank(n_mels, p.fft_size, s.sample_rate());
    let power = s.magnitude_squared();
    let mut values = Vec::with_capacity(s.frames() * n_mels);
    for t in 0..s.frames() {
        let row = &power[t * bins..(t + 1) * bins];
        for m in 0..n_mels {
            let e: f64 = fb[m * bins..(m + 1) * bins].iter().zip(row).map(|(w, p)| w * p).sum();
            values.push(T::of(e.max(LOG_FLOOR).ln()));
        }
    }
    MelFeatures::new(values, s.frames(), n_mels, p.hop as f64 / s.sample_rate() as f64)
}

/// Concatenates groups of `factor` consecutive frames; the last group is
/// zero-padded.
pub fn stack_frames<T: Real>(m: &MelFeatures<T>, factor: usize) -> Result<MelFeatures<T>> {
    if factor == 0 {
        return Err(Error::Config("stacking factor must be at least 1".into()));
    }
    let frames = m.frames.div_ceil(factor);
    let dims = m.dims * factor;
    let mut values = vec![T::zero(); frames * dims];
    values[..m.values.len()].copy_from_slice(&m.values);
    MelFeatures::new(values, frames, dims, m.frame_shift * factor as f64)
}

/// Per-dimension global statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct MvnStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl MvnStats {
    /// Pooled mean and (population) variance over every frame of every item.
    pub fn estimate<T: Real>(features: &[MelFeatures<T>]) -> Result<Self> {
        let dims = features
            .first()
            .map(|f| f.dims)
            .ok_or_else(|| Error::Domain("no features to estimate statistics from".into()))?;
        let mut sum = vec![0.0; dims];
        let mut sq = vec![0.0; dims];
        let mut count = 0usize;
        for f in features {
            if f.dims != dims {
                return Err(Error::shape("mvn", format!("dims {} vs {dims}", f.dims)));
            }
            for t in 0..f.frames {
                for (d, v) in f.row(t).iter().enumerate() {
                    let v = v.as_f64();
                    sum[d] += v;
                    sq[d] += v * v;
                }
            }
            count += f.frames;
        }
        if count == 0 {
            return Err(Error::Domain("no frames to estimate statistics from".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let variance = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0)).collect();
        Ok(Self { mean, variance })
    }
}

pub fn global_mvn<T: Real>(m: &MelFeatures<T>, stats: &MvnStats) -> Result<MelFeatures<T>> {
    if stats.mean.len() != m.dims || stats.variance.len() != m.dims {
        return Err(Error::Config(format!(
            "statistics of dimension {}/{} for features of dimension {}",
            stats.mean.len(),
            stats.variance.len(),
            m.dims
        )));
    }
    if let Some(d) = stats.variance.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Config(format!("variance entry {d} is not positive")));
    }
    let inv: Vec<f64> = stats.variance.iter().map(|v| 1.0 / v.sqrt()).collect();
    let values = m
        .values
        .chunks(m.dims.max(1))
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(d, v)| T::of((v.as_f64() - stats.mean[d]) * inv[d]))
                .collect::<Vec<_>>()
        })
        .collect();
    MelFeatures::new(values, m.frames, m.dims, m.frame_shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftParams, Waveform, Window};

    #[test]
    fn zero_spectrogram_hits_floor() {
        let p = StftParams::new(512, 160, Window::Hann).unwrap();
        let s = ComplexSpectrogram::<f64>::zeros(4, p, 16_000);
        let m = log_mel(&s, 80).unwrap();
        assert!(m.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn impulse_only_reaches_covering_bands() {
        let p = StftParams::new(512, 160, Window::Hann).unwrap();
        let bins = p.bins();
        let fb = mel_filterbank(80, 512, 16_000);
        for k in [3usize, 40, 200] {
            let mut s = ComplexSpectrogram::<f64>::zeros(1, p, 16_000);
            s.real_mut()[k] = 1.0;
            let m = log_mel(&s, 80).unwrap();
            for band in 0..80 {
                let covered = fb[band * bins + k] > 0.0;
                assert_eq!(m.values()[band] > LOG_FLOOR.ln(), covered, "bin {k} band {band}");
            }
        }
    }

    #[test]
    fn filterbank_rows_positive_and_cross_at_half() {
        let bins = 257;
        let fb = mel_filterbank(80, 512, 16_000);
        let top = hz_to_mel(8000.0);
        let centres: Vec<f64> = (1..=80).map(|i| mel_to_hz(top * i as f64 / 81.0)).collect();
        for m in 0..80 {
            assert!(fb[m * bins..(m + 1) * bins].iter().sum::<f64>() > 0.0, "row {m}");
        }
        // between consecutive centres the two triangles are complementary,
        // so they cross at exactly one half
        for m in 0..79 {
            for k in 0..bins {
                let f = k as f64 * 16_000.0 / 512.0;
                if f > centres[m] && f < centres[m + 1] {
                    let total = fb[m * bins + k] + fb[(m + 1) * bins + k];
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stacking_layouts() {
        let six = MelFeatures::<f64>::new((0..480).map(|v| v as f64).collect(), 6, 80, 0.01).unwrap();
        let id = stack_frames(&six, 1).unwrap();
        assert_eq!(id, six);
        let st = stack_frames(&six, 3).unwrap();
        assert_eq!((st.frames(), st.dims()), (2, 240));
        assert!((st.frame_shift() - 0.03).abs() < 1e-15);
        assert_eq!(st.row(1)[0], 240.0);

        let seven = MelFeatures::<f64>::new(vec![1.0; 7 * 80], 7, 80, 0.01).unwrap();
        let st = stack_frames(&seven, 3).unwrap();
        assert_eq!(st.frames(), 3);
        let last = st.row(2);
        assert!(last[..80].iter().all(|&v| v == 1.0));
        assert!(last[80..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mvn_on_own_stats_standardises() {
        let vals: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 * 0.3 + (i % 3) as f64).collect();
        let m = MelFeatures::<f64>::new(vals, 20, 3, 0.01).unwrap();
        let stats = MvnStats::estimate(std::slice::from_ref(&m)).unwrap();
        let z = global_mvn(&m, &stats).unwrap();
        let again = MvnStats::estimate(&[z]).unwrap();
        for d in 0..3 {
            assert!(again.mean[d].abs() < 1e-12);
            assert!((again.variance[d] - 1.0).abs() < 1e-12);
        }
        let unit = MvnStats {
            mean: vec![0.0; 3],
            variance: vec![1.0; 3],
        };
        assert_eq!(global_mvn(&m, &unit).unwrap(), m);
        let bad = MvnStats {
            mean: vec![0.0; 3],
            variance: vec![1.0, 0.0, 1.0],
        };
        assert!(matches!(global_mvn(&m, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn louder_signal_never_lowers_log_mel() {
        let p = StftParams::new(512, 160, Window::Hann).unwrap();
        let x: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.05).sin() * 0.3 + (i as f64 * 0.71).cos() * 0.01).collect();
        let loud: Vec<f64> = x.iter().map(|v| v * 1.7).collect();
        let a = log_mel(&stft(&Waveform::<f64>::new(x, 16_000).unwrap(), &p).unwrap(), 80).unwrap();
        let b = log_mel(&stft(&Waveform::<f64>::new(loud, 16_000).unwrap(), &p).unwrap(), 80).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!(v >= u);
        }
    }
}
