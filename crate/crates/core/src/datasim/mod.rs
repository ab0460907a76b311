//! Deterministic toy corpus: synthetic token audio, noise recordings,
//! SNR-exact mixing, optional reverberation and TSV manifests.

mod manifest;
mod mix;
mod synth;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use manifest::{Manifest, ManifestRecord};
pub use mix::{convolve_rir, crop, mix_at_snr, snr_db};
pub use synth::{
    design_centroid, synth_noise, synth_rir, synth_token_audio, synth_utterance, token_design, NoiseKind, Partial,
    SYNTH_TOKENS, TOKEN_PEAK,
};

use crate::asr_model::{TokenSequence, Vocabulary};
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};

/// Mixtures whose peak exceeds this are scaled down together with their
/// reference.
pub const MAX_PEAK: f64 = 0.95;

/// 64-bit FNV-1a.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for a named item, independent of rendering order.
pub fn item_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a(name))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub test_snr_min_db: f64,
    pub test_snr_max_db: f64,
    pub noise_types: Vec<NoiseKind>,
    /// Length of each noise recording.
    pub noise_seconds: f64,
    pub reverb_probability: f64,
    pub t60: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_utterances: 200,
            test_utterances: 50,
            min_tokens: 2,
            max_tokens: 4,
            snr_min_db: -10.0,
            snr_max_db: 30.0,
            test_snr_min_db: -10.0,
            test_snr_max_db: 30.0,
            noise_types: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
            noise_seconds: 30.0,
            reverb_probability: 0.0,
            t60: 0.3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.train_utterances == 0 {
            return fail("train_utterances must be positive".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return fail(format!("token range {}..={} is empty", self.min_tokens, self.max_tokens));
        }
        for (lo, hi) in [(self.snr_min_db, self.snr_max_db), (self.test_snr_min_db, self.test_snr_max_db)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!("SNR range [{lo}, {hi}] is invalid"));
            }
        }
        if self.noise_types.is_empty() {
            return fail("at least one noise type is required".into());
        }
        // longest utterance is max_tokens × 0.5 s
        if self.noise_seconds < 0.5 * self.max_tokens as f64 + 0.1 {
            return fail(format!("noise_seconds {} is shorter than the longest utterance", self.noise_seconds));
        }
        if !(0.0..=1.0).contains(&self.reverb_probability) {
            return fail(format!("reverb_probability {} outside [0, 1]", self.reverb_probability));
        }
        if !(self.t60 > 0.0 && self.t60 < 0.3 * self.min_tokens as f64) {
            return fail(format!("t60 {} must be positive and shorter than the shortest utterance", self.t60));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("corpus config serializes")
    }
}

/// Recipe for one rendered mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub clean_id: String,
    pub noise_id: NoiseKind,
    pub snr_db: f64,
    /// Seed of the synthetic RIR, if reverberant.
    pub rir_id: Option<u64>,
    pub seed: u64,
}

/// Rendered mixture with its (possibly reverberant) reference, both scaled
/// by the same gain.
pub struct Mixture {
    pub noisy: Waveform<f64>,
    pub reference: Waveform<f64>,
    pub gain: f64,
}

impl MixtureSpec {
    /// Reverberates the clean signal if requested, crops the noise at a
    /// seeded offset and mixes at the target SNR measured against the
    /// reverberant clean.
    pub fn render(&self, clean: &Waveform<f64>, noise: &Waveform<f64>, t60: f64) -> Result<Mixture> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let reference = match self.rir_id {
            Some(id) => convolve_rir(clean, &synth_rir(t60, id)?)?,
            None => clean.clone(),
        };
        if noise.len() < reference.len() {
            return Err(Error::Length {
                got: noise.len(),
                need: reference.len(),
            });
        }
        let offset = rng.gen_range(0..=noise.len() - reference.len());
        let noise = crop(noise, offset, reference.len())?;
        let (noisy, _) = mix_at_snr(&reference, &noise, self.snr_db)?;
        let peak = noisy.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gain = if peak > MAX_PEAK { MAX_PEAK / peak } else { 1.0 };
        let scale = |w: &Waveform<f64>| Waveform::new(w.samples().iter().map(|v| v * gain).collect(), w.sample_rate());
        Ok(Mixture {
            noisy: scale(&noisy)?,
            reference: scale(&reference)?,
            gain,
        })
    }
}

/// Noise recordings of one split.
#[derive(Clone, Debug)]
pub struct NoisePool {
    pub recordings: Vec<(NoiseKind, Waveform<f64>)>,
}

impl NoisePool {
    pub fn synthesize(kinds: &[NoiseKind], seconds: f64, master: u64, split: &str) -> Result<Self> {
        let n = (seconds * CANONICAL_RATE as f64) as usize;
        let recordings = kinds
            .iter()
            .map(|&k| Ok((k, synth_noise(k, n, item_seed(master, &format!("noise-{split}-{}", k.name())))?)))
            .collect::<Result<_>>()?;
        Ok(Self { recordings })
    }

    pub fn get(&self, kind: NoiseKind) -> Option<&Waveform<f64>> {
        self.recordings.iter().find(|(k, _)| *k == kind).map(|(_, w)| w)
    }

    pub fn load(root: &Path, kinds: &[NoiseKind], split: &str) -> Result<Self> {
        let recordings = kinds
            .iter()
            .map(|&k| Ok((k, read_wav(root.join(noise_file(split, k)))?)))
            .collect::<Result<_>>()?;
        Ok(Self { recordings })
    }
}

fn noise_file(split: &str, kind: NoiseKind) -> String {
    format!("noise/{split}_{}.wav", kind.name())
}

/// File names written by [`build_corpus`], relative to the corpus root.
pub const CORPUS_CONFIG_FILE: &str = "corpus.toml";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_CLEAN: &str = "train_clean.tsv";
pub const TRAIN_NOISY: &str = "train_noisy.tsv";
pub const TEST_CLEAN: &str = "test_clean.tsv";
pub const TEST_NOISY: &str = "test_noisy.tsv";

/// A rendered corpus: clean and mixture manifests per split plus the noise
/// recordings used for on-the-fly mixing.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub config: CorpusConfig,
    pub vocab: Vocabulary,
    pub train_clean: Manifest,
    pub train_noisy: Manifest,
    pub test_clean: Manifest,
    pub test_noisy: Manifest,
}

impl Corpus {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let cfg_path = root.join(CORPUS_CONFIG_FILE);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = CorpusConfig::from_toml_str(&text)?;
        let vocab = Vocabulary::load(root.join(VOCAB_FILE))?;
        let m = |f: &str| Manifest::load(root.join(f), &vocab);
        Ok(Self {
            train_clean: m(TRAIN_CLEAN)?,
            train_noisy: m(TRAIN_NOISY)?,
            test_clean: m(TEST_CLEAN)?,
            test_noisy: m(TEST_NOISY)?,
            root,
            config,
            vocab,
        })
    }

    pub fn noise_pool(&self, split: &str) -> Result<NoisePool> {
        NoisePool::load(&self.root, &self.config.noise_types, split)
    }
}

fn draw_tokens(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> Vec<usize> {
    let n = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
    (0..n).map(|_| rng.gen_range(0..SYNTH_TOKENS)).collect()
}

fn write(root: &Path, rel: &str, w: &Waveform<f64>) -> Result<()> {
    write_wav(root.join(rel), w)
}

fn mkdirs(root: &Path) -> Result<()> {
    for d in ["", "clean", "noisy", "reference", "noise"] {
        let p = root.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Renders both splits under `root` and writes manifests, the vocabulary
/// and the configuration. The result depends only on `(cfg, seed)`.
pub fn build_corpus(cfg: &CorpusConfig, seed: u64, root: impl AsRef<Path>) -> Result<Corpus> {
    cfg.validate()?;
    let root = root.as_ref();
    mkdirs(root)?;
    let vocab = Vocabulary::digits();
    let mut manifests = Vec::new();
    for (split, count, (lo, hi)) in [
        ("train", cfg.train_utterances, (cfg.snr_min_db, cfg.snr_max_db)),
        ("test", cfg.test_utterances, (cfg.test_snr_min_db, cfg.test_snr_max_db)),
    ] {
        let pool = NoisePool::synthesize(&cfg.noise_types, cfg.noise_seconds, seed, split)?;
        for (kind, w) in &pool.recordings {
            write(root, &noise_file(split, *kind), w)?;
        }
        let (mut clean_recs, mut noisy_recs) = (Vec::new(), Vec::new());
        for u in 0..count {
            let id = format!("{split}_{u:05}");
            let useed = item_seed(seed, &id);
            let mut rng = ChaCha8Rng::seed_from_u64(useed);
            let tokens = draw_tokens(&mut rng, cfg);
            let transcript = TokenSequence::from_content(&tokens, &vocab)?;
            let clean = crate::dsp::wav::quantize(&synth_utterance(&tokens, rng.gen())?);
            let spec = MixtureSpec {
                clean_id: id.clone(),
                noise_id: cfg.noise_types[rng.gen_range(0..cfg.noise_types.len())],
                snr_db: if lo == hi { lo } else { rng.gen_range(lo..hi) },
                rir_id: rng.gen_bool(cfg.reverb_probability).then(|| rng.gen()),
                seed: rng.gen(),
            };
            let noise = pool.get(spec.noise_id).expect("pool covers configured kinds");
            let mix = spec.render(&clean, noise, cfg.t60)?;
            let (clean_rel, noisy_rel, ref_rel) =
                (format!("clean/{id}.wav"), format!("noisy/{id}.wav"), format!("reference/{id}.wav"));
            write(root, &clean_rel, &clean)?;
            write(root, &noisy_rel, &mix.noisy)?;
            write(root, &ref_rel, &mix.reference)?;
            let duration = clean.duration();
            clean_recs.push(ManifestRecord {
                id: id.clone(),
                audio: clean_rel.into(),
                transcript: transcript.clone(),
                duration,
                reference: None,
                snr_db: None,
            });
            noisy_recs.push(ManifestRecord {
                id,
                audio: noisy_rel.into(),
                transcript,
                duration,
                reference: Some(ref_rel.into()),
                snr_db: Some(spec.snr_db),
            });
        }
        manifests.push(Manifest::new(root, clean_recs)?);
        manifests.push(Manifest::new(root, noisy_recs)?);
    }
    let names = [TRAIN_CLEAN, TRAIN_NOISY, TEST_CLEAN, TEST_NOISY];
    for (m, name) in manifests.iter().zip(names) {
        m.save(root.join(name), &vocab)?;
    }
    vocab.save(root.join(VOCAB_FILE))?;
    let cfg_path = root.join(CORPUS_CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut it = manifests.into_iter();
    let mut next = || it.next().expect("four manifests");
    Ok(Corpus {
        root: root.to_path_buf(),
        config: cfg.clone(),
        vocab,
        train_clean: next(),
        train_noisy: next(),
        test_clean: next(),
        test_noisy: next(),
    })
}
