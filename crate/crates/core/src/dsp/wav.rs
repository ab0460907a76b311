//! 16-bit PCM mono WAV files at the canonical rate.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Real, Waveform, CANONICAL_RATE};
use crate::error::{Error, Result};

const SCALE: f64 = 32767.0;

pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::Format {
            what: "wav",
            detail: format!("{path:?}: expected 16-bit PCM mono, found {spec:?}"),
        });
    }
    if spec.sample_rate != CANONICAL_RATE {
        return Err(Error::Config(format!(
            "{path:?} is sampled at {} Hz; only {CANONICAL_RATE} Hz is supported",
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| T::of(v as f64 / SCALE)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes with saturation to [-1, 1].
pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    if w.sample_rate() != CANONICAL_RATE {
        return Err(Error::Config(format!(
            "refusing to write {} Hz audio; only {CANONICAL_RATE} Hz is supported",
            w.sample_rate()
        )));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in w.samples() {
        let v = (s.as_f64().clamp(-1.0, 1.0) * SCALE).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Rounds samples to the values a write/read cycle would produce.
pub fn quantize<T: Real>(w: &Waveform<T>) -> Waveform<T> {
    let samples = w
        .samples()
        .iter()
        .map(|&s| T::of((s.as_f64().clamp(-1.0, 1.0) * SCALE).round() / SCALE))
        .collect();
    Waveform::new(samples, w.sample_rate()).expect("finite by construction")
}
