use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::asr_model::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};

/// One utterance. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub audio: PathBuf,
    pub transcript: TokenSequence,
    pub duration: f64,
    /// Clean reference for mixtures.
    pub reference: Option<PathBuf>,
    pub snr_db: Option<f64>,
}

/// Tab-separated utterance list: `id, wav, transcript, duration` with two
/// optional trailing columns `reference wav, snr_db` (`-` when absent).
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

fn bad(line: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "manifest",
        detail: format!("line {line}: {}", detail.into()),
    }
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.id.is_empty() || r.id.contains(char::is_whitespace) {
                return Err(Error::Format {
                    what: "manifest",
                    detail: format!("invalid utterance id {:?}", r.id),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Format {
                    what: "manifest",
                    detail: format!("duplicate utterance id {}", r.id),
                });
            }
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn audio_path(&self, r: &ManifestRecord) -> PathBuf {
        self.root.join(&r.audio)
    }

    pub fn reference_path(&self, r: &ManifestRecord) -> Option<PathBuf> {
        r.reference.as_ref().map(|p| self.root.join(p))
    }

    /// Every record has a clean reference.
    pub fn is_paired(&self) -> bool {
        self.records.iter().all(|r| r.reference.is_some())
    }

    pub fn to_tsv(&self, vocab: &Vocabulary) -> String {
        let extended = self.records.iter().any(|r| r.reference.is_some() || r.snr_db.is_some());
        let mut out = String::new();
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}",
                r.id,
                r.audio.display(),
                vocab.decode(&r.transcript),
                r.duration
            );
            if extended {
                let reference = r.reference.as_ref().map_or("-".to_string(), |p| p.display().to_string());
                let snr = r.snr_db.map_or("-".to_string(), |s| s.to_string());
                let _ = write!(out, "\t{reference}\t{snr}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>, vocab: &Vocabulary) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 && cols.len() != 6 {
                return Err(bad(n, format!("expected 4 or 6 tab-separated columns, found {}", cols.len())));
            }
            let duration: f64 = cols[3].trim().parse().map_err(|_| bad(n, format!("bad duration {:?}", cols[3])))?;
            if !(duration >= 0.0 && duration.is_finite()) {
                return Err(bad(n, format!("bad duration {duration}")));
            }
            let (reference, snr_db) = if cols.len() == 6 {
                let reference = (cols[4] != "-").then(|| PathBuf::from(cols[4]));
                let snr = if cols[5] == "-" {
                    None
                } else {
                    Some(cols[5].trim().parse::<f64>().map_err(|_| bad(n, format!("bad SNR {:?}", cols[5])))?)
                };
                (reference, snr)
            } else {
                (None, None)
            };
            records.push(ManifestRecord {
                id: cols[0].to_string(),
                audio: PathBuf::from(cols[1]),
                transcript: vocab.encode(cols[2]),
                duration,
                reference,
                snr_db,
            });
        }
        Self::new(root, records)
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv(vocab)).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root, vocab)?;
        for r in &m.records {
            for p in std::iter::once(m.audio_path(r)).chain(m.reference_path(r)) {
                if !p.is_file() {
                    return Err(Error::io(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, format!("listed for {}", r.id)),
                    ));
                }
            }
        }
        Ok(m)
    }
}
