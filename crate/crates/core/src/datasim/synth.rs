use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};

/// Number of tokens with an audio rendering (the digit words).
pub const SYNTH_TOKENS: usize = 10;
pub const TOKEN_PEAK: f64 = 0.5;
const EDGE_SECONDS: f64 = 0.02;

/// One partial of a token pattern.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partial {
    pub freq: f64,
    pub amp: f64,
    /// Amplitude-modulation rate in Hz.
    pub am_rate: f64,
}

/// Fixed design table: partial layout and nominal duration of a token.
pub fn token_design(token: usize) -> Result<(Vec<Partial>, f64)> {
    if token >= SYNTH_TOKENS {
        return Err(Error::Token {
            id: token,
            vocab: SYNTH_TOKENS,
        });
    }
    let k = token as f64;
    let mut partials = vec![
        Partial {
            freq: 220.0 + 95.0 * k,
            amp: 1.0,
            am_rate: 3.0 + (token % 4) as f64,
        },
        Partial {
            freq: 800.0 + 160.0 * k,
            amp: 0.6,
            am_rate: 5.0 + (token % 3) as f64,
        },
    ];
    if token >= 3 {
        partials.push(Partial {
            freq: 1900.0 + 210.0 * k,
            amp: 0.35,
            am_rate: 7.0 + (token % 5) as f64,
        });
    }
    Ok((partials, 0.34 + 0.012 * k))
}

/// Power-weighted mean frequency of a design table entry.
pub fn design_centroid(token: usize) -> Result<f64> {
    let (partials, _) = token_design(token)?;
    let num: f64 = partials.iter().map(|p| p.amp * p.amp * p.freq).sum();
    let den: f64 = partials.iter().map(|p| p.amp * p.amp).sum();
    Ok(num / den)
}

/// Deterministic rendering of one token: the design-table partials with
/// seeded ±3% pitch and ±10% duration variation, raised-cosine edges and
/// peak [`TOKEN_PEAK`].
pub fn synth_token_audio(token: usize, seed: u64) -> Result<Waveform<f64>> {
    let (partials, nominal) = token_design(token)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pitch: f64 = rng.gen_range(0.97..=1.03);
    let stretch: f64 = rng.gen_range(0.9..=1.1);
    let rate = CANONICAL_RATE as f64;
    let n = ((nominal * stretch).clamp(0.3, 0.5) * rate).round() as usize;
    let phases: Vec<(f64, f64)> = partials
        .iter()
        .map(|_| (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let edge = (EDGE_SECONDS * rate) as usize;
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let v: f64 = partials
                .iter()
                .zip(&phases)
                .map(|(p, (ph, am_ph))| {
                    let am = 1.0 + 0.5 * (2.0 * PI * p.am_rate * t + am_ph).sin();
                    p.amp * am * (2.0 * PI * p.freq * pitch * t + ph).sin()
                })
                .sum();
            let ramp = |j: usize| 0.5 - 0.5 * (PI * j as f64 / edge as f64).cos();
            let env = if i < edge {
                ramp(i)
            } else if n - 1 - i < edge {
                ramp(n - 1 - i)
            } else {
                1.0
            };
            v * env
        })
        .collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    x.iter_mut().for_each(|v| *v *= TOKEN_PEAK / peak);
    Waveform::new(x, CANONICAL_RATE)
}

/// Concatenation of token renderings, token `i` seeded with
/// `seed + i`.
pub fn synth_utterance(tokens: &[usize], seed: u64) -> Result<Waveform<f64>> {
    let mut out = Vec::new();
    for (i, &t) in tokens.iter().enumerate() {
        out.extend(synth_token_audio(t, seed.wrapping_add(i as u64))?.into_samples());
    }
    Waveform::new(out, CANONICAL_RATE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    /// Pink noise under a slow random amplitude envelope.
    Babble,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Babble => "babble",
        }
    }
}

fn pink(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Paul Kellet's refined pink filter
    let mut b = [0.0f64; 7];
    (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect()
}

/// Seeded noise of `n` samples scaled to unit RMS.
pub fn synth_noise(kind: NoiseKind, n: usize, seed: u64) -> Result<Waveform<f64>> {
    if n == 0 {
        return Err(Error::Domain("noise length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = match kind {
        NoiseKind::White => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        NoiseKind::Pink => pink(n, &mut rng),
        NoiseKind::Babble => {
            let base = pink(n, &mut rng);
            let mods: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(2.0..7.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            base.iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = i as f64 / CANONICAL_RATE as f64;
                    let env: f64 = mods.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>() / 4.0;
                    v * (1.0 + 0.8 * env).max(0.05)
                })
                .collect()
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    x.iter_mut().for_each(|v| *v /= rms);
    Waveform::new(x, CANONICAL_RATE)
}

/// Exponentially decaying impulse response with sparse seeded reflections.
/// The direct path is the first (largest) tap.
pub fn synth_rir(t60: f64, seed: u64) -> Result<Waveform<f64>> {
    if !(t60 > 0.0 && t60.is_finite()) {
        return Err(Error::Domain(format!("T60 {t60} must be positive")));
    }
    let rate = CANONICAL_RATE as f64;
    let n = ((t60 * rate) as usize).max(2);
    // amplitude falls by 60 dB over t60
    let decay = 3.0 * 10f64.ln() / (t60 * rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0; n];
    h[0] = 1.0;
    for (i, v) in h.iter_mut().enumerate().skip(1) {
        if rng.gen_bool(0.05) {
            *v = 0.5 * rng.gen_range(-1.0..1.0) * (-decay * i as f64).exp();
        }
    }
    Waveform::new(h, CANONICAL_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_are_deterministic_and_bounded() {
        for t in 0..SYNTH_TOKENS {
            let a = synth_token_audio(t, 42).unwrap();
            assert_eq!(a, synth_token_audio(t, 42).unwrap());
            assert!((0.3..=0.5).contains(&a.duration()), "{}", a.duration());
            let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - TOKEN_PEAK).abs() < 1e-12);
        }
        assert!(synth_token_audio(10, 0).is_err());
        assert_ne!(synth_token_audio(3, 1).unwrap(), synth_token_audio(3, 2).unwrap());
    }

    #[test]
    fn design_centroids_are_separated() {
        let c: Vec<f64> = (0..SYNTH_TOKENS).map(|t| design_centroid(t).unwrap()).collect();
        for i in 0..c.len() {
            for j in 0..i {
                assert!((c[i] - c[j]).abs() > 50.0, "{i} vs {j}: {} {}", c[i], c[j]);
            }
        }
    }

    #[test]
    fn utterance_length_is_sum_of_tokens() {
        let toks = [4, 1, 9];
        let u = synth_utterance(&toks, 7).unwrap();
        let parts: usize = toks
            .iter()
            .enumerate()
            .map(|(i, &t)| synth_token_audio(t, 7 + i as u64).unwrap().len())
            .sum();
        assert_eq!(u.len(), parts);
    }

    #[test]
    fn noise_has_unit_rms() {
        for kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble] {
            let n = synth_noise(kind, 16_000, 3).unwrap();
            assert!((n.power() - 1.0).abs() < 1e-12);
            assert_eq!(n, synth_noise(kind, 16_000, 3).unwrap());
        }
    }

    #[test]
    fn pink_noise_tilts_downward() {
        let x = synth_noise(NoiseKind::Pink, 1 << 14, 5).unwrap().into_samples();
        // first difference attenuates lows: a pink signal changes slowly
        let diff: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / x.len() as f64;
        let w = synth_noise(NoiseKind::White, 1 << 14, 5).unwrap().into_samples();
        let wdiff: f64 = w.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(diff < 0.5 * wdiff);
    }

    #[test]
    fn rir_starts_with_direct_path() {
        let h = synth_rir(0.3, 1).unwrap();
        assert_eq!(h.len(), 4800);
        assert_eq!(h.samples()[0], 1.0);
        assert!(h.samples()[1..].iter().all(|v| v.abs() < 0.5));
        assert!(synth_rir(0.0, 1).is_err());
    }
}
