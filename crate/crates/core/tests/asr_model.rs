use mtse::asr_model::{AsrInput, AsrModel, AsrModelConfig, TokenSequence, Vocabulary};
use mtse::autodiff::grad_check_params;
use mtse::autodiff::Graph;
use mtse::dsp::{stft, MvnStats, Waveform};
use mtse::losses::{label_smoothed_ce, LABEL_SMOOTHING};

fn tiny() -> AsrModelConfig {
    AsrModelConfig {
        n_mels: 6,
        stack: 2,
        encoder_hidden: 3,
        encoder_layers: 1,
        decoder_hidden: 4,
        attention_dim: 3,
        embedding_dim: 2,
        ..AsrModelConfig::default()
    }
}

fn audio(n: usize, seed: f64) -> Waveform<f64> {
    let s = (0..n)
        .map(|i| 0.2 * (i as f64 * 0.031 * seed).sin() + 0.05 * (i as f64 * 0.77 + seed).cos())
        .collect();
    Waveform::new(s, 16_000).unwrap()
}

fn with_stats(mut m: AsrModel, a: &Waveform<f64>) -> AsrModel {
    let stats = MvnStats::estimate(&[m.raw_features(a).unwrap()]).unwrap();
    m.set_mvn(&stats).unwrap();
    m
}

fn target(v: &Vocabulary) -> TokenSequence {
    v.encode("three one four")
}

#[test]
fn logits_have_one_row_per_target_token() {
    let v = Vocabulary::digits();
    let m = AsrModel::build(tiny(), v.clone(), 1).unwrap();
    let t = target(&v);
    let logits = m.logits(&audio(3200, 1.0), &t).unwrap();
    assert_eq!(logits.shape(), vec![4, 12]);
    assert!(logits.value().iter().all(|x| x.is_finite()));
}

#[test]
fn graph_front_end_matches_plain_features() {
    let v = Vocabulary::digits();
    let a = audio(4000, 1.3);
    let m = with_stats(AsrModel::build(AsrModelConfig::default(), v, 2).unwrap(), &a);
    let plain = m.features_plain(&a).unwrap();
    let g = Graph::new();
    let p = m.params().bind(&g);
    let x = g.constant(&[1, a.len()], a.to_f64()).unwrap();
    let f = m.features(&p, AsrInput::Waveform(&x)).unwrap();
    assert_eq!(f.shape(), vec![plain.frames(), plain.dims()]);
    assert_eq!(plain.dims(), 240);
    for (u, w) in f.value().iter().zip(plain.values()) {
        assert!((u - w).abs() < 1e-6, "{u} vs {w}");
    }
}

#[test]
fn waveform_and_spectrum_inputs_agree() {
    let v = Vocabulary::digits();
    let a = audio(3000, 0.7);
    let m = with_stats(AsrModel::build(tiny(), v.clone(), 3).unwrap(), &a);
    let t = target(&v);
    let g = Graph::new();
    let p = m.params().bind(&g);
    let x = g.constant(&[1, a.len()], a.to_f64()).unwrap();
    let from_wave = m.forward(&p, AsrInput::Waveform(&x), &t).unwrap().value();
    let spec = stft(&a, &m.config().stft().unwrap()).unwrap();
    let shape = [1, spec.frames(), spec.bins()];
    let re = g.constant(&shape, spec.real().to_vec()).unwrap();
    let im = g.constant(&shape, spec.imag().to_vec()).unwrap();
    let from_spec = m.forward(&p, AsrInput::Spectrum(&re, &im), &t).unwrap().value();
    for (u, w) in from_wave.iter().zip(&from_spec) {
        assert!((u - w).abs() < 1e-6, "{u} vs {w}");
    }
}

#[test]
fn frozen_model_passes_gradient_to_its_input_only() {
    let v = Vocabulary::digits();
    let a = audio(2400, 2.1);
    let mut m = with_stats(AsrModel::build(tiny(), v.clone(), 4).unwrap(), &a);
    m.set_frozen(true);
    assert!(m.is_frozen());
    assert_eq!(m.param_count(), 0);
    let g = Graph::new();
    let p = m.params().bind(&g);
    let x = g.variable(&[1, a.len()], a.to_f64()).unwrap();
    let t = target(&v);
    let loss = label_smoothed_ce(&m.forward(&p, AsrInput::Waveform(&x), &t).unwrap(), &t, LABEL_SMOOTHING).unwrap();
    let grads = loss.backward().unwrap();
    let gx = grads.get(&x).expect("input gradient");
    assert!(gx.iter().all(|v| v.is_finite()));
    assert!(gx.iter().any(|v| v.abs() > 0.0));
    m.params_mut().accumulate_grads(&p, &grads);
    assert!(m.params().iter().all(|(_, t)| t.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0))));
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let v = Vocabulary::digits();
    let cfg = AsrModelConfig {
        n_mels: 3,
        stack: 1,
        encoder_hidden: 2,
        decoder_hidden: 2,
        attention_dim: 2,
        ..tiny()
    };
    let m = AsrModel::build(cfg, v.clone(), 5).unwrap();
    let t = v.encode("two nine");
    let frames = 4;
    let feats: Vec<f64> = (0..frames * 3).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
    let errs = grad_check_params(
        m.params(),
        |g, p| {
            let f = g.constant(&[frames, 3], feats.clone())?;
            label_smoothed_ce(&m.forward(p, AsrInput::Features(&f), &t)?, &t, LABEL_SMOOTHING)
        },
        1e-5,
    )
    .unwrap();
    assert!(errs.len() >= 10);
    for (name, e) in errs {
        assert!(e < 1e-4, "{name}: {e}");
    }
}

#[test]
fn greedy_decoding_terminates_or_reports_truncation() {
    let v = Vocabulary::digits();
    let a = audio(3200, 1.9);
    let mut m = with_stats(AsrModel::build(tiny(), v.clone(), 6).unwrap(), &a);
    let eos = v.eos();
    let bias = m.params().find("output.b").unwrap();
    m.params_mut().get_mut(bias).data_mut()[eos] = 1e3;
    let d = m.decode_greedy(&a).unwrap();
    assert!(!d.truncated);
    assert!(d.tokens.content().is_empty());

    m.params_mut().get_mut(bias).data_mut()[eos] = -1e3;
    let d = m.decode_greedy(&a).unwrap();
    assert!(d.truncated);
    let frames = m.features_plain(&a).unwrap().frames();
    assert_eq!(d.tokens.content().len(), 2 * frames);
    assert_eq!(*d.tokens.ids().last().unwrap(), eos);
}

#[test]
fn build_is_deterministic_and_checkpoint_roundtrips() {
    let v = Vocabulary::digits();
    let a = audio(2800, 0.5);
    let m = with_stats(AsrModel::build(tiny(), v.clone(), 7).unwrap(), &a);
    let same = with_stats(AsrModel::build(tiny(), v.clone(), 7).unwrap(), &a);
    assert_eq!(m.params().checksum(), same.params().checksum());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("asr.ckpt");
    m.save(&path).unwrap();
    let back = AsrModel::load(&path).unwrap();
    assert!(back.is_frozen());
    assert_eq!(back.config(), m.config());
    assert_eq!(back.vocab(), m.vocab());
    assert_eq!(back.params().checksum(), m.params().checksum());
    assert_eq!(back.mvn(), m.mvn());
    assert_eq!(back.decode_greedy(&a).unwrap(), m.decode_greedy(&a).unwrap());
}

#[test]
fn rejects_mismatched_inputs() {
    let v = Vocabulary::digits();
    assert!(AsrModel::build(AsrModelConfig { vocab_size: 5, ..tiny() }, v.clone(), 0).is_err());
    let mut m = AsrModel::build(tiny(), v.clone(), 0).unwrap();
    assert!(m.decode_greedy(&Waveform::new(vec![0.0; 4000], 8_000).unwrap()).is_err());
    assert!(m.logits(&audio(100, 1.0), &target(&v)).is_err());
    assert!(m
        .set_mvn(&MvnStats {
            mean: vec![0.0; 12],
            variance: vec![-1.0; 12],
        })
        .is_err());
}
