use std::path::Path;

use mtse::asr_model::{AsrModel, AsrModelConfig};
use mtse::autodiff::{checkpoint, Graph};
use mtse::datasim::{build_corpus, Corpus, CorpusConfig, NoiseKind};
use mtse::dsp::{StftParams, Window};
use mtse::error::Error;
use mtse::metrics::EvalReport;
use mtse::se_model::{MaskActivation, SeModel, SeModelConfig};
use mtse::trainer::{
    asr_step_loss, evaluate, mtl_train, pretrain_asr, pretrain_se, step_kinds, sweep_se_probability, AsrItem, StepKind,
    SeTrainData, TrainSchedule, NOISY_SYSTEM,
};

fn corpus(dir: &Path) -> Corpus {
    let cfg = CorpusConfig {
        train_utterances: 6,
        test_utterances: 3,
        min_tokens: 2,
        max_tokens: 2,
        snr_min_db: 0.0,
        snr_max_db: 10.0,
        test_snr_min_db: 0.0,
        test_snr_max_db: 10.0,
        noise_types: vec![NoiseKind::White, NoiseKind::Pink],
        noise_seconds: 1.5,
        ..CorpusConfig::default()
    };
    build_corpus(&cfg, 4, dir).unwrap()
}

fn se_config() -> SeModelConfig {
    SeModelConfig {
        encoder_channels: vec![2, 4],
        lstm_hidden: 4,
        stft: StftParams::new(64, 32, Window::SqrtHann).unwrap(),
        ..SeModelConfig::default()
    }
}

fn asr_config() -> AsrModelConfig {
    AsrModelConfig {
        n_mels: 8,
        stack: 2,
        encoder_hidden: 4,
        encoder_layers: 1,
        decoder_hidden: 4,
        attention_dim: 4,
        embedding_dim: 3,
        ..AsrModelConfig::default()
    }
}

fn frozen_asr(c: &Corpus) -> AsrModel {
    let mut m = AsrModel::build(asr_config(), c.vocab.clone(), 1).unwrap();
    let items = AsrItem::load_manifest(&c.train_clean).unwrap();
    let sched = TrainSchedule {
        iterations: 3,
        batch_size: 2,
        ..TrainSchedule::default()
    };
    pretrain_asr(&mut m, &items, &sched).unwrap();
    m
}

fn schedule(iterations: usize, p: f64) -> TrainSchedule {
    TrainSchedule {
        iterations,
        batch_size: 2,
        se_step_probability: p,
        seed: 9,
        crop_seconds: 0.1,
        ..TrainSchedule::default()
    }
}

/// Unbounded mask with zero output weights and unit real bias.
fn identity_model() -> SeModel {
    let mut m = SeModel::build(
        SeModelConfig {
            mask_activation: MaskActivation::Unbounded,
            ..se_config()
        },
        2,
    )
    .unwrap();
    let store = m.params_mut();
    for (name, value) in [
        ("decoder.0.deconv.w_real", 0.0),
        ("decoder.0.deconv.w_imag", 0.0),
        ("decoder.0.deconv.b_real", 1.0),
        ("decoder.0.deconv.b_imag", 0.0),
    ] {
        let id = store.find(name).unwrap();
        store.get_mut(id).data_mut().fill(value);
    }
    m
}

#[test]
fn se_pretraining_is_deterministic_and_lowers_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let data = SeTrainData::from_corpus(&c).unwrap();
    let sched = TrainSchedule {
        eval_every: 20,
        learning_rate: 3e-3,
        ..schedule(40, 1.0)
    };
    let mut a = SeModel::build(se_config(), 3).unwrap();
    let mut b = SeModel::build(se_config(), 3).unwrap();
    let oa = pretrain_se(&mut a, &data, &sched, None).unwrap();
    let ob = pretrain_se(&mut b, &data, &sched, None).unwrap();
    assert_eq!(oa, ob);
    assert_eq!(a.params().checksum(), b.params().checksum());
    assert_eq!(oa.count(StepKind::Se), 40);
    let first = oa.validation.first().unwrap().1;
    let last = oa.validation.last().unwrap().1;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn mtl_keeps_the_recognizer_bitwise_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    asr.save(dir.path().join("asr.ckpt")).unwrap();
    let before = std::fs::read(dir.path().join("asr.ckpt")).unwrap();
    let data = SeTrainData::from_corpus(&c).unwrap();
    let items = AsrItem::load_manifest(&c.train_noisy).unwrap();
    let mut se = SeModel::build(se_config(), 3).unwrap();
    let start = se.params().checksum();
    let out = mtl_train(&mut se, &asr, &data, &items, &schedule(12, 0.5), None).unwrap();
    asr.save(dir.path().join("asr_after.ckpt")).unwrap();
    assert_eq!(before, std::fs::read(dir.path().join("asr_after.ckpt")).unwrap());
    assert_ne!(start, se.params().checksum());
    let kinds: Vec<StepKind> = out.steps.iter().map(|s| s.kind).collect();
    assert_eq!(kinds, step_kinds(0.5, 9, 12).unwrap());
    assert!(out.count(StepKind::Asr) > 0 && out.count(StepKind::Se) > 0);
}

#[test]
fn probability_one_is_pure_se_training() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    let data = SeTrainData::from_corpus(&c).unwrap();
    let items = AsrItem::load_manifest(&c.train_noisy).unwrap();
    let mut a = SeModel::build(se_config(), 3).unwrap();
    let mut b = a.clone();
    let out = mtl_train(&mut a, &asr, &data, &items, &schedule(6, 1.0), None).unwrap();
    assert_eq!(out.count(StepKind::Asr), 0);
    pretrain_se(&mut b, &data, &schedule(6, 1.0), None).unwrap();
    assert_eq!(a.params().checksum(), b.params().checksum());
}

#[test]
fn unfrozen_recognizer_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let mut asr = frozen_asr(&c);
    asr.set_frozen(false);
    let data = SeTrainData::from_corpus(&c).unwrap();
    let items = AsrItem::load_manifest(&c.train_noisy).unwrap();
    let mut se = SeModel::build(se_config(), 3).unwrap();
    let start = se.params().checksum();
    let err = mtl_train(&mut se, &asr, &data, &items, &schedule(4, 0.5), None).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
    assert_eq!(start, se.params().checksum());
}

#[test]
fn asr_step_gradient_reaches_only_the_enhancer() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    let items = AsrItem::load_manifest(&c.train_noisy).unwrap();
    let se = SeModel::build(se_config(), 3).unwrap();
    let g = Graph::new();
    let bound = se.params().bind(&g);
    let loss = asr_step_loss(&se, &bound, &asr, &g, &[&items[0], &items[1]]).unwrap();
    assert!(loss.item().is_finite() && loss.item() > 0.0);
    let grads = loss.backward().unwrap();
    let mut store = se.params().clone();
    store.zero_grad();
    store.accumulate_grads(&bound, &grads);
    assert!(store.grad_norm() > 0.0);
    assert_eq!(asr.param_count(), 0);
}

#[test]
fn divergence_reports_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let data = SeTrainData::from_corpus(&c).unwrap();
    let mut se = SeModel::build(se_config(), 3).unwrap();
    let id = se.params().find("encoder.0.conv.b_real").unwrap();
    se.params_mut().get_mut(id).data_mut().fill(f64::NAN);
    let out = dir.path().join("run");
    match pretrain_se(&mut se, &data, &schedule(3, 1.0), Some(&out)) {
        Err(Error::Diverged { iteration, last_good }) => {
            assert_eq!(iteration, 1);
            let path = last_good.unwrap();
            assert!(checkpoint::load(&path).is_ok());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn identity_enhancer_reproduces_the_noisy_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    let id = identity_model();
    let report = evaluate::<f64>(&[("identity", &id)], &asr, &c.test_noisy, 2).unwrap();
    let noisy: Vec<_> = report.rows.iter().filter(|r| r.system == NOISY_SYSTEM).collect();
    let ident: Vec<_> = report.rows.iter().filter(|r| r.system == "identity").collect();
    assert_eq!(noisy.len(), 3);
    for (n, i) in noisy.iter().zip(&ident) {
        assert_eq!(n.id, i.id);
        assert!((n.si_sdr.unwrap() - i.si_sdr.unwrap()).abs() < 1e-6);
        assert!((n.sdr.unwrap() - i.sdr.unwrap()).abs() < 1e-6);
        assert!((n.stoi.unwrap() - i.stoi.unwrap()).abs() < 1e-6);
        assert_eq!(n.hypothesis, i.hypothesis);
        assert_eq!(n.edits, i.edits);
    }
}

#[test]
fn report_aggregates_match_per_utterance_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    let se = SeModel::build(se_config(), 3).unwrap();
    let one = evaluate::<f64>(&[("seed", &se)], &asr, &c.test_noisy, 1).unwrap();
    let three = evaluate::<f64>(&[("seed", &se)], &asr, &c.test_noisy, 3).unwrap();
    assert_eq!(one.to_tsv(), three.to_tsv());
    for s in one.summaries() {
        let rows: Vec<_> = one.rows.iter().filter(|r| r.system == s.system).collect();
        let mean = rows.iter().map(|r| r.si_sdr.unwrap()).sum::<f64>() / rows.len() as f64;
        assert!((s.si_sdr.unwrap() - mean).abs() < 1e-12);
        let edits: usize = rows.iter().map(|r| r.edits.total()).sum();
        let refs: usize = rows.iter().map(|r| r.ref_tokens).sum();
        assert!((s.ter_pct - 100.0 * edits as f64 / refs as f64).abs() < 1e-12);
        assert_eq!(s.utterances, rows.len());
    }
}

#[test]
fn missing_references_keep_token_errors_only() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    let report: EvalReport = evaluate::<f32>(&[], &asr, &c.test_clean, 1).unwrap();
    assert!(report.rows.iter().all(|r| r.si_sdr.is_none() && r.stoi.is_none()));
    assert!(report.rows.iter().all(|r| r.ref_tokens > 0));
}

#[test]
fn sweep_emits_one_row_per_probability() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let asr = frozen_asr(&c);
    let data = SeTrainData::from_corpus(&c).unwrap();
    let items = AsrItem::load_manifest(&c.train_noisy).unwrap();
    let seed = SeModel::build(se_config(), 3).unwrap();
    let out = dir.path().join("sweep");
    let (rows, models) = sweep_se_probability(
        &[0.0, 1.0],
        &seed,
        &asr,
        &data,
        &items,
        &c.test_noisy,
        &schedule(4, 0.5),
        Some(&out),
        1,
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(models.len(), 2);
    assert_eq!((rows[0].se_steps, rows[0].asr_steps), (0, 4));
    assert_eq!((rows[1].se_steps, rows[1].asr_steps), (4, 0));
    assert!(out.join("p0.00/mtl.ckpt").exists() && out.join("p1.00/steps.tsv").exists());
    assert!(sweep_se_probability(&[0.5], &seed, &asr, &data, &items, &c.test_noisy, &schedule(4, 0.5), None, 1).is_err());
}
