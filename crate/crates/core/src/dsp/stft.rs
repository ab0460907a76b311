use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Real, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    SqrtHann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                match self {
                    Window::Hann => hann,
                    Window::SqrtHann => hann.max(0.0).sqrt(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
            window: Window::SqrtHann,
        }
    }
}

impl StftParams {
    pub fn new(fft_size: usize, hop: usize, window: Window) -> Result<Self> {
        let p = Self {
            fft_size,
            hop,
            window,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::Config(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!(
                "hop {} outside (0, {}]",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            1 + (len - self.fft_size) / self.hop
        }
    }

    /// Overlap-added squared window, one period of length `hop`.
    fn squared_window_sum(&self) -> Vec<f64> {
        let w = self.window.coefficients(self.fft_size);
        let mut acc = vec![0.0; self.hop];
        for (i, v) in w.iter().enumerate() {
            acc[i % self.hop] += v * v;
        }
        acc
    }

    /// Whether analysis × synthesis windowing overlap-adds to a constant.
    pub fn is_cola(&self) -> bool {
        let acc = self.squared_window_sum();
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        mean > 0.0 && acc.iter().all(|v| (v - mean).abs() <= 1e-9 * mean)
    }
}

/// Complex time-frequency matrix, `frames × bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T = f32> {
    real: Vec<T>,
    imag: Vec<T>,
    frames: usize,
    params: StftParams,
    sample_rate: u32,
}

impl<T: Real> ComplexSpectrogram<T> {
    pub fn new(real: Vec<T>, imag: Vec<T>, frames: usize, params: StftParams, sample_rate: u32) -> Result<Self> {
        let n = frames * params.bins();
        if real.len() != n || imag.len() != n {
            return Err(Error::shape(
                "spectrogram",
                format!("{frames}×{} needs {n} values, got {}/{}", params.bins(), real.len(), imag.len()),
            ));
        }
        if real.iter().chain(&imag).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            real,
            imag,
            frames,
            params,
            sample_rate,
        })
    }

    pub fn zeros(frames: usize, params: StftParams, sample_rate: u32) -> Self {
        let n = frames * params.bins();
        Self {
            real: vec![T::zero(); n],
            imag: vec![T::zero(); n],
            frames,
            params,
            sample_rate,
        }
    }

    pub fn real(&self) -> &[T] {
        &self.real
    }

    pub fn imag(&self) -> &[T] {
        &self.imag
    }

    pub fn real_mut(&mut self) -> &mut [T] {
        &mut self.real
    }

    pub fn imag_mut(&mut self) -> &mut [T] {
        &mut self.imag
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.params.bins() == other.params.bins()
    }

    pub fn magnitude_squared(&self) -> Vec<f64> {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(r, i)| r.as_f64().powi(2) + i.as_f64().powi(2))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ComplexSpectrogram<U> {
        ComplexSpectrogram {
            real: self.real.iter().map(|v| U::of(v.as_f64())).collect(),
            imag: self.imag.iter().map(|v| U::of(v.as_f64())).collect(),
            frames: self.frames,
            params: self.params,
            sample_rate: self.sample_rate,
        }
    }
}

/// Windowed DFT of every full frame; only non-negative frequencies kept.
pub fn stft<T: Real>(w: &Waveform<T>, p: &StftParams) -> Result<ComplexSpectrogram<T>> {
    p.validate()?;
    let n = p.fft_size;
    if w.len() < n {
        return Err(Error::Length { got: w.len(), need: n });
    }
    let frames = p.frames_for(w.len());
    let bins = p.bins();
    let window: Vec<T> = p.window.coefficients(n).into_iter().map(T::of).collect();
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut real = Vec::with_capacity(frames * bins);
    let mut imag = Vec::with_capacity(frames * bins);
    let x = w.samples();
    for t in 0..frames {
        let seg = &x[t * p.hop..t * p.hop + n];
        for ((b, &s), &win) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * win, T::zero());
        }
        fft.process(&mut buf);
        real.extend(buf[..bins].iter().map(|c| c.re));
        imag.extend(buf[..bins].iter().map(|c| c.im));
    }
    ComplexSpectrogram::new(real, imag, frames, *p, w.sample_rate())
}

/// Weighted overlap-add synthesis normalized by the overlap-added squared
/// window. Samples whose window envelope vanishes are set to zero.
pub fn istft<T: Real>(s: &ComplexSpectrogram<T>, p: &StftParams) -> Result<Waveform<T>> {
    p.validate()?;
    if s.params() != *p {
        return Err(Error::Config(format!(
            "spectrogram params {:?} differ from {:?}",
            s.params(),
            p
        )));
    }
    if !p.is_cola() {
        return Err(Error::Config(format!(
            "{:?} window with hop {} of {} violates constant overlap-add",
            p.window, p.hop, p.fft_size
        )));
    }
    let n = p.fft_size;
    let bins = p.bins();
    let frames = s.frames();
    if frames == 0 {
        return Waveform::new(Vec::new(), s.sample_rate());
    }
    let len = (frames - 1) * p.hop + n;
    let window = p.window.coefficients(n);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut out = vec![0.0f64; len];
    let mut env = vec![0.0f64; len];
    let scale = 1.0 / n as f64;
    for t in 0..frames {
        let re = &s.real()[t * bins..(t + 1) * bins];
        let im = &s.imag()[t * bins..(t + 1) * bins];
        for k in 0..bins {
            buf[k] = Complex::new(re[k], im[k]);
        }
        buf[0].im = T::zero();
        buf[n / 2].im = T::zero();
        for k in bins..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * p.hop;
        for i in 0..n {
            out[start + i] += buf[i].re.as_f64() * scale * window[i];
            env[start + i] += window[i] * window[i];
        }
    }
    let peak = env.iter().cloned().fold(0.0, f64::max);
    let samples = out
        .iter()
        .zip(&env)
        .map(|(&y, &e)| if e > 1e-8 * peak { T::of(y / e) } else { T::zero() })
        .collect();
    Waveform::new(samples, s.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(frame: &[f64], k: usize) -> (f64, f64) {
        let n = frame.len() as f64;
        frame.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &x)| {
            let th = 2.0 * PI * k as f64 * t as f64 / n;
            (re + x * th.cos(), im - x * th.sin())
        })
    }

    fn hann8() -> StftParams {
        StftParams::new(8, 4, Window::Hann).unwrap()
    }

    #[test]
    fn constant_signal_sees_only_the_window_spectrum() {
        // periodic Hann of length N transforms to N/2 at DC and -N/4 at bin 1
        let w = Waveform::<f64>::new(vec![1.0; 8], 16_000).unwrap();
        let s = stft(&w, &hann8()).unwrap();
        assert_eq!(s.frames(), 1);
        assert!((s.real()[0] - 4.0).abs() < 1e-12);
        assert!((s.real()[1] + 2.0).abs() < 1e-12 && s.imag()[1].abs() < 1e-12);
        for k in 2..5 {
            assert!(s.real()[k].abs() < 1e-12 && s.imag()[k].abs() < 1e-12, "bin {k}");
        }
    }

    #[test]
    fn cosine_peaks_at_its_bin_and_matches_direct_dft() {
        let n = 8;
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * 2.0 * t as f64 / n as f64).cos()).collect();
        let w = Waveform::<f64>::new(x.clone(), 16_000).unwrap();
        let s = stft(&w, &hann8()).unwrap();
        let mags: Vec<f64> = s.magnitude_squared();
        let peak = (0..5).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert_eq!(peak, 2);
        let win = Window::Hann.coefficients(n);
        let frame: Vec<f64> = x.iter().zip(&win).map(|(a, b)| a * b).collect();
        for k in 0..5 {
            let (re, im) = naive_dft(&frame, k);
            assert!((s.real()[k] - re).abs() < 1e-12 && (s.imag()[k] - im).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let p = StftParams::default();
        let w = Waveform::<f32>::new(vec![0.0; 2048], 16_000).unwrap();
        let s = stft(&w, &p).unwrap();
        assert!(s.real().iter().chain(s.imag()).all(|&v| v == 0.0));
        let back = istft(&ComplexSpectrogram::<f32>::zeros(5, p, 16_000), &p).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_signal_is_length_error() {
        let w = Waveform::<f32>::new(vec![0.0; 100], 16_000).unwrap();
        assert!(matches!(stft(&w, &StftParams::default()), Err(Error::Length { got: 100, need: 512 })));
    }

    #[test]
    fn non_cola_pair_is_config_error() {
        let p = StftParams::new(512, 256, Window::Hann).unwrap();
        assert!(!p.is_cola());
        let s = ComplexSpectrogram::<f64>::zeros(3, p, 16_000);
        assert!(matches!(istft(&s, &p), Err(Error::Config(_))));
        assert!(StftParams::new(512, 128, Window::Hann).unwrap().is_cola());
        assert!(StftParams::default().is_cola());
    }

    #[test]
    fn roundtrip_one_second_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = StftParams::default();
        let w = Waveform::<f64>::new(x.clone(), 16_000).unwrap();
        let y = istft(&stft(&w, &p).unwrap(), &p).unwrap();
        let (lo, hi) = (p.fft_size, y.len() - p.fft_size);
        let err: f64 = (lo..hi).map(|i| (y.samples()[i] - x[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (lo..hi).map(|i| x[i].powi(2)).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6, "{}", err / norm);
    }

    #[test]
    fn parseval_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = StftParams::default();
        let x: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = stft(&Waveform::<f64>::new(x.clone(), 16_000).unwrap(), &p).unwrap();
        let win = p.window.coefficients(p.fft_size);
        let n = p.fft_size;
        for t in 0..s.frames() {
            let time: f64 = (0..n).map(|i| (x[t * p.hop + i] * win[i]).powi(2)).sum();
            let mags = &s.magnitude_squared()[t * s.bins()..(t + 1) * s.bins()];
            let spec: f64 = mags
                .iter()
                .enumerate()
                .map(|(k, m)| if k == 0 || k == n / 2 { *m } else { 2.0 * m })
                .sum::<f64>()
                / n as f64;
            assert!((time - spec).abs() <= 1e-6 * time);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn roundtrip_interior(seed in any::<u64>(), len in 2048usize..6000, quarter in any::<bool>()) {
            let p = if quarter {
                StftParams::new(256, 64, Window::Hann).unwrap()
            } else {
                StftParams::new(256, 128, Window::SqrtHann).unwrap()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = istft(&stft(&Waveform::<f64>::new(x.clone(), 16_000).unwrap(), &p).unwrap(), &p).unwrap();
            let hi = y.len() - p.fft_size;
            let err: f64 = (p.fft_size..hi).map(|i| (y.samples()[i] - x[i]).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = (p.fft_size..hi).map(|i| x[i].powi(2)).sum::<f64>().sqrt();
            prop_assert!(err / norm < 1e-6);

            let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            let y32 = istft(&stft(&Waveform::<f32>::new(x32.clone(), 16_000).unwrap(), &p).unwrap(), &p).unwrap();
            let err: f64 = (p.fft_size..hi).map(|i| ((y32.samples()[i] - x32[i]) as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err / norm < 1e-3);
        }

        #[test]
        fn linearity(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let p = StftParams::new(128, 64, Window::SqrtHann).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..700).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..700).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
            let sx = stft(&Waveform::<f64>::new(x, 16_000).unwrap(), &p).unwrap();
            let sy = stft(&Waveform::<f64>::new(y, 16_000).unwrap(), &p).unwrap();
            let sz = stft(&Waveform::<f64>::new(z, 16_000).unwrap(), &p).unwrap();
            for i in 0..sz.real().len() {
                prop_assert!((sz.real()[i] - (a * sx.real()[i] + b * sy.real()[i])).abs() < 1e-9);
                prop_assert!((sz.imag()[i] - (a * sx.imag()[i] + b * sy.imag()[i])).abs() < 1e-9);
            }
        }
    }
}
