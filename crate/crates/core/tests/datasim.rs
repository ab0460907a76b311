use std::collections::BTreeMap;
use std::path::Path;

use mtse::datasim::{build_corpus, snr_db, Corpus, CorpusConfig, NoiseKind};
use mtse::dsp::wav::read_wav;

fn small() -> CorpusConfig {
    CorpusConfig {
        train_utterances: 12,
        test_utterances: 4,
        noise_seconds: 3.0,
        reverb_probability: 0.5,
        ..CorpusConfig::default()
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn corpus_is_a_pure_function_of_config_and_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_corpus(&small(), 9, a.path()).unwrap();
    build_corpus(&small(), 9, b.path()).unwrap();
    build_corpus(&small(), 10, c.path()).unwrap();
    let (ta, tb, tc) = (tree(a.path()), tree(b.path()), tree(c.path()));
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn rendered_files_match_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let built = build_corpus(&small(), 3, dir.path()).unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    assert_eq!(corpus.train_clean, built.train_clean);
    assert_eq!(corpus.train_noisy.len(), 12);
    assert_eq!(corpus.test_noisy.len(), 4);
    let cfg = small();
    for m in [&corpus.train_noisy, &corpus.test_noisy] {
        assert!(m.is_paired());
        for r in &m.records {
            let noisy = read_wav::<f64>(m.audio_path(r)).unwrap();
            let reference = read_wav::<f64>(m.reference_path(r).unwrap()).unwrap();
            let resid: Vec<f64> = noisy.samples().iter().zip(reference.samples()).map(|(a, b)| a - b).collect();
            let target = r.snr_db.unwrap();
            assert!((snr_db(reference.samples(), &resid) - target).abs() < 0.01, "{}", r.id);
            assert!((cfg.snr_min_db..cfg.snr_max_db).contains(&target));
            let n = r.transcript.content().len();
            assert!((cfg.min_tokens..=cfg.max_tokens).contains(&n));
            // every token lasts 0.3 to 0.5 s
            assert!(r.duration >= 0.3 * n as f64 - 1e-9 && r.duration <= 0.5 * n as f64 + 1e-9);
        }
    }
    let pool = corpus.noise_pool("train").unwrap();
    assert_eq!(pool.recordings.len(), 3);
    assert!(pool.get(NoiseKind::Babble).is_some());
}

#[test]
fn unwritable_root_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let err = build_corpus(&small(), 1, file.join("sub")).unwrap_err();
    assert!(matches!(err, mtse::Error::Io { .. }), "{err}");
}
