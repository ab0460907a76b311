use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TokenSequence, Vocabulary};
use crate::autodiff::{checkpoint, Bound, Graph, ParamId, ParamStore, Var};
use crate::cnn::{Dense, Lstm};
use crate::dsp::{
    global_mvn, log_mel, mel_filterbank, stack_frames, stft, stft_graph, MelFeatures, MvnStats, Real, StftParams,
    Waveform, Window, CANONICAL_RATE, LOG_FLOOR,
};
use crate::error::{Error, Result};

/// Smallest per-dimension variance used for feature normalization.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsrModelConfig {
    pub vocab_size: usize,
    pub n_mels: usize,
    pub stack: usize,
    pub fft_size: usize,
    /// Samples between analysis frames (10 ms at 16 kHz).
    pub hop: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub embedding_dim: usize,
    /// Greedy decoding stops after this many tokens per stacked frame.
    pub max_length_factor: usize,
}

impl Default for AsrModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            n_mels: 80,
            stack: 3,
            fft_size: 512,
            hop: 160,
            encoder_hidden: 128,
            encoder_layers: 2,
            decoder_hidden: 128,
            attention_dim: 128,
            embedding_dim: 32,
            max_length_factor: 2,
        }
    }
}

impl AsrModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("n_mels", self.n_mels),
            ("stack", self.stack),
            ("hop", self.hop),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
            ("embedding_dim", self.embedding_dim),
            ("max_length_factor", self.max_length_factor),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        self.stft()?;
        if self.n_mels >= self.fft_size / 2 + 1 {
            return fail(format!("n_mels {} needs more than {} FFT bins", self.n_mels, self.fft_size / 2 + 1));
        }
        Ok(())
    }

    pub fn stft(&self) -> Result<StftParams> {
        StftParams::new(self.fft_size, self.hop, Window::Hann)
    }

    /// Width of a stacked feature vector.
    pub fn feature_dim(&self) -> usize {
        self.n_mels * self.stack
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ASR config serializes")
    }
}

/// Graph input of the recognizer.
#[derive(Clone, Copy)]
pub enum AsrInput<'a> {
    /// `1×L` samples.
    Waveform(&'a Var),
    /// `1×frames×bins` real and imaginary parts computed with the model's
    /// STFT parameters.
    Spectrum(&'a Var, &'a Var),
    /// Normalized stacked features, `T×feature_dim`.
    Features(&'a Var),
}

/// Result of greedy decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: TokenSequence,
    /// Decoding hit the length limit before emitting `<eos>`.
    pub truncated: bool,
}

/// Attention encoder-decoder: bidirectional LSTM encoder over stacked
/// log-mel frames, additive attention, one-layer LSTM decoder.
#[derive(Clone, Debug)]
pub struct AsrModel {
    cfg: AsrModelConfig,
    vocab: Vocabulary,
    store: ParamStore,
    mvn_mean: ParamId,
    mvn_var: ParamId,
    encoder: Vec<(Lstm, Lstm)>,
    embedding: ParamId,
    decoder: Lstm,
    attn_keys: Dense,
    attn_query: Dense,
    attn_v: ParamId,
    output: Dense,
}

impl AsrModel {
    pub fn build(cfg: AsrModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab.len() != cfg.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, config expects {}",
                vocab.len(),
                cfg.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.feature_dim();
        let mvn_mean = store.add_constant("frontend.mvn_mean", &[d], 0.0, false);
        let mvn_var = store.add_constant("frontend.mvn_var", &[d], 1.0, false);
        let (he, hd) = (cfg.encoder_hidden, cfg.decoder_hidden);
        let mut encoder = Vec::new();
        let mut width = d;
        for l in 0..cfg.encoder_layers {
            let f = Lstm::new(&mut store, &format!("encoder.{l}.fwd"), width, he, &mut rng);
            let b = Lstm::new(&mut store, &format!("encoder.{l}.bwd"), width, he, &mut rng);
            encoder.push((f, b));
            width = 2 * he;
        }
        let embedding = store.add_uniform("decoder.embedding", &[cfg.vocab_size, cfg.embedding_dim], 0.1, &mut rng);
        let decoder = Lstm::new(&mut store, "decoder.lstm", cfg.embedding_dim + 2 * he, hd, &mut rng);
        let attn_keys = Dense::new(&mut store, "attention.keys", 2 * he, cfg.attention_dim, &mut rng);
        let attn_query = Dense::new(&mut store, "attention.query", hd, cfg.attention_dim, &mut rng);
        let bound = crate::cnn::init_bound(cfg.attention_dim);
        let attn_v = store.add_uniform("attention.v", &[cfg.attention_dim, 1], bound, &mut rng);
        let output = Dense::new(&mut store, "output", hd + 2 * he, cfg.vocab_size, &mut rng);
        Ok(Self {
            cfg,
            vocab,
            store,
            mvn_mean,
            mvn_var,
            encoder,
            embedding,
            decoder,
            attn_keys,
            attn_query,
            attn_v,
            output,
        })
    }

    pub fn config(&self) -> &AsrModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Freezes (or unfreezes) every parameter.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.store.set_trainable(!frozen);
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }

    pub fn mvn(&self) -> MvnStats {
        MvnStats {
            mean: self.store.get(self.mvn_mean).data().to_vec(),
            variance: self.store.get(self.mvn_var).data().to_vec(),
        }
    }

    /// Installs normalization statistics; variances are floored at
    /// [`VARIANCE_FLOOR`].
    pub fn set_mvn(&mut self, stats: &MvnStats) -> Result<()> {
        let d = self.cfg.feature_dim();
        if stats.mean.len() != d || stats.variance.len() != d {
            return Err(Error::Config(format!("normalization statistics must have dimension {d}")));
        }
        if stats.variance.iter().chain(&stats.mean).any(|v| !v.is_finite()) || stats.variance.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("normalization statistics must be finite with non-negative variance".into()));
        }
        let mean = self.store.get_mut(self.mvn_mean);
        mean.data_mut().copy_from_slice(&stats.mean);
        mean.quantize_f32();
        let var = self.store.get_mut(self.mvn_var);
        for (d, &v) in var.data_mut().iter_mut().zip(&stats.variance) {
            *d = v.max(VARIANCE_FLOOR);
        }
        var.quantize_f32();
        Ok(())
    }

    /// Stacked, un-normalized log-mel features computed outside the graph.
    pub fn raw_features<T: Real>(&self, audio: &Waveform<T>) -> Result<MelFeatures<f64>> {
        self.check_rate(audio.sample_rate())?;
        let spec = stft(&audio.cast::<f64>(), &self.cfg.stft()?)?;
        stack_frames(&log_mel(&spec, self.cfg.n_mels)?, self.cfg.stack)
    }

    /// Normalized features computed outside the graph.
    pub fn features_plain<T: Real>(&self, audio: &Waveform<T>) -> Result<MelFeatures<f64>> {
        global_mvn(&self.raw_features(audio)?, &self.mvn())
    }

    fn check_rate(&self, rate: u32) -> Result<()> {
        if rate != CANONICAL_RATE {
            return Err(Error::Config(format!("recognizer expects {CANONICAL_RATE} Hz audio, got {rate} Hz")));
        }
        Ok(())
    }

    /// Differentiable front end returning `T×feature_dim` normalized
    /// features.
    pub fn features(&self, p: &Bound, input: AsrInput<'_>) -> Result<Var> {
        let (re, im) = match input {
            AsrInput::Features(f) => {
                let s = f.shape();
                if s.len() != 2 || s[1] != self.cfg.feature_dim() {
                    return Err(Error::shape("asr_features", format!("{s:?}")));
                }
                return Ok(f.clone());
            }
            AsrInput::Waveform(x) => {
                let s = x.shape();
                if s.len() != 2 || s[0] != 1 {
                    return Err(Error::shape("asr_features", format!("waveform {s:?}, expected 1×L")));
                }
                if s[1] < self.cfg.fft_size {
                    return Err(Error::Length {
                        got: s[1],
                        need: self.cfg.fft_size,
                    });
                }
                stft_graph(x, &self.cfg.stft()?)?
            }
            AsrInput::Spectrum(re, im) => (re.clone(), im.clone()),
        };
        let bins = self.cfg.fft_size / 2 + 1;
        let s = re.shape();
        if s.len() != 3 || s[0] != 1 || s[2] != bins || im.shape() != s {
            return Err(Error::shape("asr_features", format!("spectrum {s:?}, expected 1×frames×{bins}")));
        }
        let frames = s[1];
        let g = re.graph();
        let power = re.square().add(&im.square())?.reshape(&[frames, bins])?;
        let fb = mel_filterbank(self.cfg.n_mels, self.cfg.fft_size, CANONICAL_RATE);
        let fb_t = g.constant(&[self.cfg.n_mels, bins], fb)?.t()?;
        let logmel = power.matmul(&fb_t)?.clamp_min(LOG_FLOOR).ln();
        let k = self.cfg.stack;
        let rows = frames.div_ceil(k);
        let padded = if rows * k > frames {
            logmel.pad(0, 0, rows * k - frames)?
        } else {
            logmel
        };
        let stacked = padded.reshape(&[rows, self.cfg.feature_dim()])?;
        let std = p[self.mvn_var].sqrt();
        stacked.sub(&p[self.mvn_mean])?.div(&std)
    }

    /// Encoder states, `T×2H`.
    pub fn encode(&self, p: &Bound, features: &Var) -> Result<Var> {
        let t = features.shape()[0];
        let mut h = features.reshape(&[t, 1, self.cfg.feature_dim()])?;
        for (f, b) in &self.encoder {
            let yf = f.forward(p, &h, false)?;
            let yb = b.forward(p, &h, true)?;
            h = features.graph().concat(&[yf, yb], 2)?;
        }
        h.reshape(&[t, 2 * self.cfg.encoder_hidden])
    }

    fn decoder_step(
        &self,
        p: &Bound,
        enc: &Var,
        keys: &Var,
        prev_token: usize,
        ctx: &Var,
        state: Option<&(Var, Var)>,
    ) -> Result<(Var, Var, (Var, Var))> {
        let g = enc.graph();
        let emb = g.embedding(&p[self.embedding], &[prev_token])?;
        let x = g.concat(&[emb, ctx.clone()], 1)?;
        let next = self.decoder.step(p, &x, state)?;
        let q = self.attn_query.forward(p, &next.0)?;
        let t = keys.shape()[0];
        let scores = keys.add(&q)?.tanh().matmul(&p[self.attn_v])?.reshape(&[1, t])?;
        let alpha = scores.softmax()?;
        let ctx = alpha.matmul(enc)?;
        let logits = self.output.forward(p, &g.concat(&[next.0.clone(), ctx.clone()], 1)?)?;
        Ok((logits, ctx, next))
    }

    /// Teacher-forced logits, `len(teacher) × vocab`. The decoder is primed
    /// with `<eos>` and then fed the reference tokens.
    pub fn forward(&self, p: &Bound, input: AsrInput<'_>, teacher: &TokenSequence) -> Result<Var> {
        if let Some(&id) = teacher.ids().iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::Token {
                id,
                vocab: self.cfg.vocab_size,
            });
        }
        let feats = self.features(p, input)?;
        let enc = self.encode(p, &feats)?;
        let keys = self.attn_keys.forward(p, &enc)?;
        let g = enc.graph();
        let mut ctx = g.constant(&[1, 2 * self.cfg.encoder_hidden], vec![0.0; 2 * self.cfg.encoder_hidden])?;
        let mut state = None;
        let mut prev = self.vocab.eos();
        let mut rows = Vec::with_capacity(teacher.len());
        for &tok in teacher.ids() {
            let (logits, c, s) = self.decoder_step(p, &enc, &keys, prev, &ctx, state.as_ref())?;
            rows.push(logits);
            ctx = c;
            state = Some(s);
            prev = tok;
        }
        g.concat(&rows, 0)
    }

    /// Step-wise argmax until `<eos>` or `max_length_factor ×` the number of
    /// stacked frames.
    pub fn decode_features(&self, features: &MelFeatures<f64>) -> Result<Decoded> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let f = g.constant(&[features.frames(), features.dims()], features.values().to_vec())?;
        let feats = self.features(&p, AsrInput::Features(&f))?;
        let enc = self.encode(&p, &feats)?;
        let keys = self.attn_keys.forward(&p, &enc)?;
        let mut ctx = g.constant(&[1, 2 * self.cfg.encoder_hidden], vec![0.0; 2 * self.cfg.encoder_hidden])?;
        let mut state = None;
        let mut prev = self.vocab.eos();
        let limit = self.cfg.max_length_factor * features.frames();
        let mut out = Vec::new();
        for _ in 0..limit {
            let (logits, c, s) = self.decoder_step(&p, &enc, &keys, prev, &ctx, state.as_ref())?;
            let v = logits.value();
            let best = v
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
                .0;
            if best == self.vocab.eos() {
                return Ok(Decoded {
                    tokens: TokenSequence::from_content(&out, &self.vocab)?,
                    truncated: false,
                });
            }
            out.push(best);
            ctx = c;
            state = Some(s);
            prev = best;
        }
        Ok(Decoded {
            tokens: TokenSequence::from_content(&out, &self.vocab)?,
            truncated: true,
        })
    }

    pub fn decode_greedy<T: Real>(&self, audio: &Waveform<T>) -> Result<Decoded> {
        self.decode_features(&self.features_plain(audio)?)
    }

    /// Teacher-forced logits for a waveform, computed through the graph
    /// front end.
    pub fn logits<T: Real>(&self, audio: &Waveform<T>, teacher: &TokenSequence) -> Result<Var> {
        self.check_rate(audio.sample_rate())?;
        let g = Graph::new();
        let p = self.store.bind(&g);
        let x = g.constant(&[1, audio.len()], audio.to_f64())?;
        self.forward(&p, AsrInput::Waveform(&x), teacher)
    }

    /// Writes the checkpoint plus `<path>.toml` (configuration) and
    /// `<path>.vocab` (one token per line).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(path, &self.store)?;
        let side = sidecar(path, "toml");
        std::fs::write(&side, self.cfg.to_toml_string()).map_err(|e| Error::io(&side, e))?;
        self.vocab.save(sidecar(path, "vocab"))
    }

    /// Loads a checkpoint; the model comes back frozen.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar(path, "toml");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let cfg = AsrModelConfig::from_toml_str(&text)?;
        let vocab = Vocabulary::load(sidecar(path, "vocab"))?;
        let mut model = Self::build(cfg, vocab, 0)?;
        model.store.load_from(&checkpoint::load(path)?)?;
        model.set_frozen(true);
        Ok(model)
    }
}

pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
