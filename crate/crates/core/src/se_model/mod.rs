//! DCCRN-style complex-mask enhancer: complex convolutional encoder, complex
//! LSTM bottleneck, mirrored decoder with concatenated skips, and a complex
//! ratio mask applied to the noisy spectrogram.

mod mask;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mask::{apply_mask, crm_ideal, CRMask, CRM_FLOOR};

use crate::autodiff::{checkpoint, Bound, Graph, ParamStore, Var};
use crate::cnn::{
    BufferUpdate, ComplexBatchNorm, ComplexConv2d, ComplexDeconv2d, ComplexDense, ComplexLstm, ComplexTensor,
    PaddingMode,
};
use crate::dsp::{istft, istft_graph, stft, ComplexSpectrogram, Real, StftParams, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    /// `M·tanh(|M|)/|M|`: magnitude below one, phase kept.
    TanhBounded,
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Dccrn,
    /// Same encoder/decoder without the recurrent bottleneck.
    Dcunet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeModelConfig {
    pub architecture: Architecture,
    pub encoder_channels: Vec<usize>,
    /// (frequency, time)
    pub kernel: [usize; 2],
    /// (frequency, time)
    pub stride: [usize; 2],
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub causal: bool,
    pub mask_activation: MaskActivation,
    pub stft: StftParams,
}

impl Default for SeModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Dccrn,
            encoder_channels: vec![8, 16, 16],
            kernel: [5, 2],
            stride: [2, 1],
            lstm_hidden: 64,
            lstm_layers: 2,
            causal: true,
            mask_activation: MaskActivation::TanhBounded,
            stft: StftParams::default(),
        }
    }
}

impl SeModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return bad(format!("encoder_channels {:?} must be non-empty and positive", self.encoder_channels));
        }
        let [kf, kt] = self.kernel;
        if kf == 0 || kf % 2 == 0 || kt == 0 {
            return bad(format!("kernel {:?} needs an odd frequency size and a positive time size", self.kernel));
        }
        if self.stride[0] == 0 || self.stride[1] != 1 {
            return bad(format!("stride {:?} must be positive in frequency and 1 in time", self.stride));
        }
        if self.architecture == Architecture::Dccrn && (self.lstm_hidden == 0 || self.lstm_layers == 0) {
            return bad("a DCCRN needs lstm_hidden and lstm_layers ≥ 1".into());
        }
        self.stft.validate()?;
        if !self.stft.is_cola() {
            return bad(format!("STFT {:?} violates constant overlap-add", self.stft));
        }
        let sizes = self.freq_sizes();
        if sizes.iter().any(|&f| f == 0) {
            return bad(format!("{} encoder blocks collapse {} bins", self.encoder_channels.len(), self.stft.bins()));
        }
        let crop = (kf - 1) / 2;
        for w in sizes.windows(2) {
            if (w[1] - 1) * self.stride[0] + kf - 2 * crop != w[0] {
                return bad(format!(
                    "decoder cannot restore {} frequency bins from {} with kernel {kf} stride {}",
                    w[0], w[1], self.stride[0]
                ));
            }
        }
        Ok(())
    }

    /// Frequency size at the input and after each encoder block.
    pub fn freq_sizes(&self) -> Vec<usize> {
        let pad = (self.kernel[0] - 1) / 2;
        let mut f = self.stft.bins();
        let mut out = vec![f];
        for _ in &self.encoder_channels {
            let padded = f + 2 * pad;
            f = if padded < self.kernel[0] { 0 } else { (padded - self.kernel[0]) / self.stride[0] + 1 };
            out.push(f);
        }
        out
    }

    fn padding(&self) -> PaddingMode {
        if self.causal {
            PaddingMode::CausalTime
        } else {
            PaddingMode::Same
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(format!("SE model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }
}

#[derive(Clone, Debug)]
struct Block<L> {
    layer: L,
    norm: Option<ComplexBatchNorm>,
}

#[derive(Clone, Debug)]
pub struct SeModel {
    cfg: SeModelConfig,
    store: ParamStore,
    encoder: Vec<Block<ComplexConv2d>>,
    bottleneck: Option<(ComplexLstm, ComplexDense)>,
    decoder: Vec<Block<ComplexDeconv2d>>,
}

/// Output of a differentiable forward pass.
pub struct MaskOutput {
    /// Activated mask, `B×1×bins×frames`.
    pub mask: ComplexTensor,
    /// Running-statistic updates from training-mode normalization.
    pub updates: Vec<BufferUpdate>,
}

impl SeModel {
    pub fn build(cfg: SeModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let kernel = (cfg.kernel[0], cfg.kernel[1]);
        let stride = (cfg.stride[0], cfg.stride[1]);
        let pad = cfg.padding();
        let ch = &cfg.encoder_channels;

        let mut encoder = Vec::new();
        let mut cin = 1;
        for (i, &co) in ch.iter().enumerate() {
            let layer = ComplexConv2d::new(&mut store, &format!("encoder.{i}.conv"), cin, co, kernel, stride, pad, true, &mut rng);
            let norm = Some(ComplexBatchNorm::new(&mut store, &format!("encoder.{i}.bn"), co));
            encoder.push(Block { layer, norm });
            cin = co;
        }

        let bottleneck = match cfg.architecture {
            Architecture::Dccrn => {
                let width = ch[ch.len() - 1] * cfg.freq_sizes()[ch.len()];
                let lstm = ComplexLstm::new(
                    &mut store,
                    "lstm",
                    width,
                    cfg.lstm_hidden,
                    cfg.lstm_layers,
                    !cfg.causal,
                    &mut rng,
                );
                let proj = ComplexDense::new(&mut store, "lstm_proj", lstm.output_size(), width, &mut rng);
                Some((lstm, proj))
            }
            Architecture::Dcunet => None,
        };

        let mut decoder = Vec::new();
        for i in (0..ch.len()).rev() {
            let co = if i == 0 { 1 } else { ch[i - 1] };
            let layer = ComplexDeconv2d::new(
                &mut store,
                &format!("decoder.{i}.deconv"),
                2 * ch[i],
                co,
                kernel,
                stride,
                pad,
                true,
                &mut rng,
            );
            let norm = (i > 0).then(|| ComplexBatchNorm::new(&mut store, &format!("decoder.{i}.bn"), co));
            decoder.push(Block { layer, norm });
        }

        Ok(Self {
            cfg,
            store,
            encoder,
            bottleneck,
            decoder,
        })
    }

    pub fn config(&self) -> &SeModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of learnable scalars (normalization buffers excluded).
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn has_bidirectional_lstm(&self) -> bool {
        self.bottleneck.as_ref().is_some_and(|(l, _)| l.bidirectional)
    }

    pub fn padding_modes(&self) -> Vec<PaddingMode> {
        self.encoder
            .iter()
            .map(|b| b.layer.padding)
            .chain(self.decoder.iter().map(|b| b.layer.padding))
            .collect()
    }

    /// Differentiable mask estimation for a `B×1×bins×frames` noisy input.
    pub fn forward(&self, p: &Bound, noisy: &ComplexTensor, training: bool) -> Result<MaskOutput> {
        let s = noisy.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.stft.bins() {
            return Err(Error::shape(
                "se_model",
                format!("input {s:?}, expected B×1×{}×frames", self.cfg.stft.bins()),
            ));
        }
        let mut updates = Vec::new();
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = noisy.clone();
        for b in &self.encoder {
            h = b.layer.forward(p, &h)?;
            if let Some(norm) = &b.norm {
                h = norm.forward(p, &h, training, &mut updates)?;
            }
            h = h.leaky_relu();
            skips.push(h.clone());
        }
        if let Some((lstm, proj)) = &self.bottleneck {
            let hs = h.shape();
            let (batch, c, f, t) = (hs[0], hs[1], hs[2], hs[3]);
            let seq = h.map(|v| v.permute(&[3, 0, 1, 2])?.reshape(&[t, batch, c * f]))?;
            let y = lstm.forward(p, &seq)?;
            let y = y.map(|v| v.reshape(&[t * batch, lstm.output_size()]))?;
            let y = proj.forward(p, &y)?;
            h = y.map(|v| v.reshape(&[t, batch, c, f])?.permute(&[1, 2, 3, 0]))?;
        }
        for b in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder block");
            h = ComplexTensor::concat(&[h, skip], 1)?;
            h = b.layer.forward(p, &h)?;
            if let Some(norm) = &b.norm {
                h = norm.forward(p, &h, training, &mut updates)?.leaky_relu();
            }
        }
        let mask = match self.cfg.mask_activation {
            MaskActivation::Unbounded => h,
            MaskActivation::TanhBounded => {
                let mag = h.re.square().add(&h.im.square())?.add_scalar(1e-12).sqrt();
                let gain = mag.tanh().div(&mag)?;
                ComplexTensor::new(h.re.mul(&gain)?, h.im.mul(&gain)?)?
            }
        };
        Ok(MaskOutput { mask, updates })
    }

    /// Masked noisy spectrum `M·Y` for a `B×1×bins×frames` input.
    pub fn enhance_spectrum(
        &self,
        p: &Bound,
        noisy: &ComplexTensor,
        training: bool,
    ) -> Result<(ComplexTensor, Vec<BufferUpdate>)> {
        let out = self.forward(p, noisy, training)?;
        Ok((out.mask.mul(noisy)?, out.updates))
    }

    /// Differentiable counterpart of [`SeModel::enhance`] with inference-mode
    /// normalization, returning `1×len` samples.
    pub fn enhance_graph(&self, p: &Bound, g: &Graph, noisy: &Waveform<f64>) -> Result<Var> {
        check_rate(noisy.sample_rate())?;
        let sp = self.cfg.stft;
        let (padded, offset) = pad_for_synthesis(noisy.samples(), &sp);
        let spec = stft(&Waveform::new(padded, noisy.sample_rate())?, &sp)?;
        let x = spectrogram_tensor(g, std::slice::from_ref(&spec))?;
        let (est, _) = self.enhance_spectrum(p, &x, false)?;
        let (bins, frames) = (spec.bins(), spec.frames());
        let to_frames = |v: &Var| v.reshape(&[1, bins, frames])?.permute(&[0, 2, 1]);
        istft_graph(&to_frames(&est.re)?, &to_frames(&est.im)?, &sp)?.slice(1, offset, noisy.len())
    }

    /// Inference-mode mask for one spectrogram.
    pub fn estimate_mask<T: Real>(&self, noisy: &ComplexSpectrogram<T>) -> Result<CRMask> {
        if noisy.params() != self.cfg.stft {
            return Err(Error::shape(
                "estimate_mask",
                format!("spectrogram {:?} vs model {:?}", noisy.params(), self.cfg.stft),
            ));
        }
        let g = Graph::new();
        let p = self.store.bind(&g);
        let x = spectrogram_tensor(&g, std::slice::from_ref(noisy))?;
        let m = self.forward(&p, &x, false)?.mask;
        let (frames, bins) = (noisy.frames(), noisy.bins());
        let to_rows = |v: Vec<f64>| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            for k in 0..bins {
                for t in 0..frames {
                    out[t * bins + k] = v[k * frames + t];
                }
            }
            out
        };
        CRMask::new(to_rows(m.re.value()), to_rows(m.im.value()), frames, bins)
    }

    /// STFT → mask → ISTFT with the same length as the input.
    pub fn enhance<T: Real>(&self, noisy: &Waveform<T>) -> Result<Waveform<T>> {
        check_rate(noisy.sample_rate())?;
        let p = self.cfg.stft;
        let (padded, offset) = pad_for_synthesis(noisy.samples(), &p);
        let w = Waveform::new(padded, noisy.sample_rate())?;
        let spec = stft(&w, &p)?;
        let mask = self.estimate_mask(&spec)?;
        let out = istft(&apply_mask(&mask, &spec)?, &p)?;
        let samples = out.samples()[offset..offset + noisy.len()].to_vec();
        Waveform::new(samples, noisy.sample_rate())
    }

    /// Writes the checkpoint and a TOML sidecar (`<path>.toml`) holding the
    /// configuration.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(path, &self.store)?;
        let side = sidecar_path(path);
        std::fs::write(&side, self.cfg.to_toml_string()).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let cfg = SeModelConfig::from_toml_str(&text)?;
        let mut model = Self::build(cfg, 0)?;
        let stored = checkpoint::load(path)?;
        model.store.load_from(&stored)?;
        Ok(model)
    }
}

fn check_rate(rate: u32) -> Result<()> {
    if rate != CANONICAL_RATE {
        return Err(Error::Config(format!("enhance expects {CANONICAL_RATE} Hz audio, got {rate} Hz")));
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// Zero-pads so every original sample is covered by a full overlap-add
/// envelope; returns the padded signal and the offset of the first original
/// sample.
pub fn pad_for_synthesis<T: Real>(x: &[T], p: &StftParams) -> (Vec<T>, usize) {
    let front = p.fft_size - p.hop;
    let mut len = front + x.len() + front;
    len = len.max(p.fft_size);
    let rem = (len - p.fft_size) % p.hop;
    if rem != 0 {
        len += p.hop - rem;
    }
    let mut out = vec![T::zero(); len];
    out[front..front + x.len()].copy_from_slice(x);
    (out, front)
}

/// Stacks spectrograms with equal frame counts into a `B×1×bins×frames`
/// constant.
pub fn spectrogram_tensor<T: Real>(g: &Graph, specs: &[ComplexSpectrogram<T>]) -> Result<ComplexTensor> {
    let first = specs.first().ok_or_else(|| Error::shape("spectrogram_tensor", "empty batch"))?;
    let (frames, bins) = (first.frames(), first.bins());
    let mut re = Vec::with_capacity(specs.len() * frames * bins);
    let mut im = Vec::with_capacity(specs.len() * frames * bins);
    for s in specs {
        if s.frames() != frames || s.bins() != bins {
            return Err(Error::shape(
                "spectrogram_tensor",
                format!("{}×{} vs {frames}×{bins}", s.frames(), s.bins()),
            ));
        }
        for k in 0..bins {
            for t in 0..frames {
                re.push(s.real()[t * bins + k].as_f64());
                im.push(s.imag()[t * bins + k].as_f64());
            }
        }
    }
    ComplexTensor::constant(g, &[specs.len(), 1, bins, frames], re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Window;

    fn small() -> SeModelConfig {
        SeModelConfig {
            encoder_channels: vec![2, 4],
            lstm_hidden: 4,
            stft: StftParams::new(32, 16, Window::SqrtHann).unwrap(),
            ..SeModelConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_sizes_restore() {
        let cfg = SeModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.freq_sizes(), vec![257, 129, 65, 33]);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut cfg = small();
        cfg.encoder_channels = vec![];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.encoder_channels = vec![2, 0];
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.kernel = [4, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.encoder_channels = vec![2; 6];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let cfg = small();
        assert_eq!(SeModelConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let err = SeModelConfig::from_toml_str("lstm_hiden = 3\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn padding_covers_full_envelope() {
        let p = StftParams::new(32, 16, Window::SqrtHann).unwrap();
        for n in [1usize, 15, 16, 17, 100] {
            let x = vec![1.0f64; n];
            let (padded, off) = pad_for_synthesis(&x, &p);
            assert_eq!(off, 16);
            assert_eq!((padded.len() - 32) % 16, 0);
            assert!(padded.len() >= off + n + 16);
        }
    }
}
