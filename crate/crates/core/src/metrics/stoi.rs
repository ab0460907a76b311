use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{Real, Waveform};
use crate::error::{Error, Result};

/// Internal sample rate of the intelligibility measure.
pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per analysis segment (384 ms).
const SEGMENT: usize = 30;
/// Lower signal-to-distortion bound in dB.
const BETA: f64 = -15.0;
const DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Short-time objective intelligibility of `est` against `reference`.
///
/// Both signals are resampled to 10 kHz, frames more than 40 dB below the
/// loudest reference frame are dropped, and one-third octave envelopes of
/// 384 ms segments are correlated after clipping.
pub fn stoi<T: Real>(est: &Waveform<T>, reference: &Waveform<T>) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape("stoi", format!("{} vs {} samples", est.len(), reference.len())));
    }
    if est.sample_rate() != reference.sample_rate() {
        return Err(Error::Config("stoi inputs must share a sample rate".into()));
    }
    let rate = reference.sample_rate();
    let x = resample(&reference.to_f64(), rate, STOI_RATE)?;
    let y = resample(&est.to_f64(), rate, STOI_RATE)?;
    let (x, y) = remove_silent_frames(&x, &y);
    let xs = band_envelopes(&x);
    let ys = band_envelopes(&y);
    let frames = xs.first().map_or(0, Vec::len);
    if frames < SEGMENT {
        return Err(Error::Domain(format!(
            "stoi needs at least {SEGMENT} active frames (about 0.4 s of speech), got {frames}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for (xb, yb) in xs.iter().zip(&ys) {
            let xseg = &xb[m - SEGMENT..m];
            let yseg = &yb[m - SEGMENT..m];
            let scale = norm(xseg) / (norm(yseg) + EPS);
            let yp: Vec<f64> = yseg.iter().zip(xseg).map(|(y, x)| (y * scale).min(x * clip)).collect();
            total += correlation(xseg, &yp);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let a: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot / ((norm(&a) + EPS) * (norm(&b) + EPS))
}

/// Hann window of `n` points without the zero end points.
fn hann(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos()).collect()
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let starts: Vec<usize> = if x.len() >= FRAME {
        (0..=x.len() - FRAME).step_by(HOP).collect()
    } else {
        Vec::new()
    };
    let frame = |s: &[f64], i: usize| -> Vec<f64> { s[i..i + FRAME].iter().zip(&w).map(|(a, b)| a * b).collect() };
    let energies: Vec<f64> = starts.iter().map(|&i| 20.0 * (norm(&frame(x, i)) + EPS).log10()).collect();
    let top = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| top - DYN_RANGE - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    let ola = |s: &[f64]| {
        if kept.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (kept.len() - 1) * HOP + FRAME];
        for (k, &i) in kept.iter().enumerate() {
            for (o, v) in out[k * HOP..k * HOP + FRAME].iter_mut().zip(frame(s, i)) {
                *o += v;
            }
        }
        out
    };
    (ola(x), ola(y))
}

/// One-third octave band matrix as `(low, high)` FFT-bin ranges.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * STOI_RATE as f64 / NFFT as f64).collect();
    let nearest = |f: f64| {
        freqs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bd), (i, &g)| {
                let d = (g - f).powi(2);
                if d < bd {
                    (i, d)
                } else {
                    (bi, bd)
                }
            })
            .0
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann(FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let bands = third_octave_bands();
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    let mut start = 0;
    while start + FRAME < x.len() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i].re = x[start + i] * w[i];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
        start += HOP;
    }
    out
}

/// Rational-ratio resampling with a Kaiser-windowed sinc low-pass at the
/// lower Nyquist rate.
pub fn resample(x: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        return Err(Error::Config("sample rates must be positive".into()));
    }
    if from == to {
        return Ok(x.to_vec());
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = ((to as u64 / g) as usize, (from as u64 / g) as usize);
    let cutoff = 1.0 / up.max(down) as f64;
    let half = 10 * up.max(down);
    let beta = 5.0;
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let t = i as f64 - half as f64;
            let sinc = if t == 0.0 { 1.0 } else { (PI * cutoff * t).sin() / (PI * cutoff * t) };
            let r = t / half as f64;
            let win = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
            cutoff * sinc * win * up as f64
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        // position on the upsampled grid
        let c = n * down;
        let mut acc = 0.0;
        let lo = c.saturating_sub(half);
        let first = lo.div_ceil(up) * up;
        let mut k = first;
        while k <= c + half {
            let idx = k / up;
            if idx >= x.len() {
                break;
            }
            acc += x[idx] * taps[k + half - c];
            k += up;
        }
        out.push(acc);
    }
    Ok(out)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..50 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Harmonic complex with a 4 Hz syllabic envelope.
    fn speechlike(n: usize) -> Waveform<f64> {
        let s = (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                let env = 0.1 + (0.5 + 0.5 * (2.0 * PI * 4.0 * t).sin()).powi(2);
                let f0 = 140.0 + 20.0 * (2.0 * PI * 1.5 * t).sin();
                env * (1..=30).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum::<f64>()
            })
            .collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn identical_signals_score_one() {
        let x = speechlike(16_000);
        let s = stoi(&x, &x).unwrap();
        assert!(s >= 0.99, "{s}");
    }

    #[test]
    fn white_noise_scores_low() {
        let x = speechlike(16_000);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Waveform::new((0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000).unwrap();
        let s = stoi(&n, &x).unwrap();
        assert!(s < 0.3, "{s}");
        assert!(s < stoi(&x, &x).unwrap());
    }

    #[test]
    fn invariant_to_estimate_scaling() {
        let x = speechlike(12_000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = x.samples().iter().map(|v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
        let a = stoi(&Waveform::new(y.clone(), 16_000).unwrap(), &x).unwrap();
        let b = stoi(&Waveform::new(y.iter().map(|v| 3.7 * v).collect(), 16_000).unwrap(), &x).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        assert!(a > 0.3 && a < 0.99);
    }

    #[test]
    fn too_short_is_rejected() {
        let x = speechlike(3000);
        assert!(matches!(stoi(&x, &x), Err(Error::Domain(_))));
    }

    #[test]
    fn resampling_preserves_a_passband_tone() {
        let x: Vec<f64> = (0..16_000).map(|i| (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin()).collect();
        let y = resample(&x, 16_000, 10_000).unwrap();
        assert_eq!(y.len(), 10_000);
        for (n, v) in y.iter().enumerate().skip(200).take(9_600) {
            let want = (2.0 * PI * 440.0 * n as f64 / 10_000.0).sin();
            assert!((v - want).abs() < 1e-2, "{n}: {v} vs {want}");
        }
    }

    #[test]
    fn band_edges_are_increasing() {
        let b = third_octave_bands();
        assert_eq!(b.len(), 15);
        assert_eq!(b[0].0, 7);
        for w in b.windows(2) {
            assert!(w[0].1 <= w[1].0 + 1 && w[0].0 < w[1].0);
        }
    }
}
