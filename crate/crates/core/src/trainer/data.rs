use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::asr_model::TokenSequence;
use crate::datasim::{Corpus, Manifest, MixtureSpec, NoisePool};
use crate::dsp::wav::read_wav;
use crate::dsp::{Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};

/// Equal-length `(noisy, reference)` training pairs.
pub type SeBatch = Vec<(Waveform<f64>, Waveform<f64>)>;

/// Source of SE-step mixtures.
#[derive(Clone, Debug)]
pub enum SeTrainData {
    /// Clean utterances mixed with random noise crops at random SNRs.
    OnTheFly {
        clean: Vec<Waveform<f64>>,
        noise: NoisePool,
        snr_db: (f64, f64),
        reverb_probability: f64,
        t60: f64,
    },
    /// Pre-rendered mixtures with their references.
    Paired(Vec<(Waveform<f64>, Waveform<f64>)>),
}

impl SeTrainData {
    /// On-the-fly mixing from the training split of a corpus.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let clean = corpus
            .train_clean
            .records
            .iter()
            .map(|r| read_wav(corpus.train_clean.audio_path(r)))
            .collect::<Result<Vec<_>>>()?;
        if clean.is_empty() {
            return Err(Error::Config("training split has no utterances".into()));
        }
        let c = &corpus.config;
        Ok(Self::OnTheFly {
            clean,
            noise: corpus.noise_pool("train")?,
            snr_db: (c.snr_min_db, c.snr_max_db),
            reverb_probability: c.reverb_probability,
            t60: c.t60,
        })
    }

    /// Mixtures of a paired manifest.
    pub fn from_paired_manifest(m: &Manifest) -> Result<Self> {
        if m.is_empty() || !m.is_paired() {
            return Err(Error::Config("SE training needs a non-empty manifest with clean references".into()));
        }
        let pairs = m
            .records
            .iter()
            .map(|r| {
                let noisy = read_wav(m.audio_path(r))?;
                let reference = read_wav(m.reference_path(r).expect("paired"))?;
                if noisy.len() != reference.len() {
                    return Err(Error::Length {
                        got: reference.len(),
                        need: noisy.len(),
                    });
                }
                Ok((noisy, reference))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Paired(pairs))
    }

    /// Draws `batch` mixtures cropped (or zero-padded) to `crop` samples.
    pub fn sample(&self, rng: &mut ChaCha8Rng, batch: usize, crop: usize) -> Result<SeBatch> {
        (0..batch).map(|_| self.sample_one(rng, crop)).collect()
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng, crop: usize) -> Result<(Waveform<f64>, Waveform<f64>)> {
        let (noisy, reference) = match self {
            SeTrainData::OnTheFly {
                clean,
                noise,
                snr_db,
                reverb_probability,
                t60,
            } => {
                let c = &clean[rng.gen_range(0..clean.len())];
                let (kind, rec) = &noise.recordings[rng.gen_range(0..noise.recordings.len())];
                let spec = MixtureSpec {
                    clean_id: String::new(),
                    noise_id: *kind,
                    snr_db: if snr_db.0 == snr_db.1 {
                        snr_db.0
                    } else {
                        rng.gen_range(snr_db.0..snr_db.1)
                    },
                    rir_id: rng.gen_bool(*reverb_probability).then(|| rng.gen()),
                    seed: rng.gen(),
                };
                let m = spec.render(c, rec, *t60)?;
                (m.noisy, m.reference)
            }
            SeTrainData::Paired(pairs) => pairs[rng.gen_range(0..pairs.len())].clone(),
        };
        let len = noisy.len();
        let offset = if len > crop { rng.gen_range(0..=len - crop) } else { 0 };
        let cut = |w: &Waveform<f64>| {
            let mut v = w.samples()[offset..(offset + crop).min(len)].to_vec();
            v.resize(crop, 0.0);
            Waveform::new(v, CANONICAL_RATE)
        };
        Ok((cut(&noisy)?, cut(&reference)?))
    }
}

/// Utterance with its transcript for ASR-side training.
#[derive(Clone, Debug)]
pub struct AsrItem {
    pub id: String,
    pub audio: Waveform<f64>,
    pub tokens: TokenSequence,
}

impl AsrItem {
    pub fn load_manifest(m: &Manifest) -> Result<Vec<Self>> {
        m.records
            .iter()
            .map(|r| {
                Ok(Self {
                    id: r.id.clone(),
                    audio: read_wav(m.audio_path(r))?,
                    tokens: r.transcript.clone(),
                })
            })
            .collect()
    }
}
