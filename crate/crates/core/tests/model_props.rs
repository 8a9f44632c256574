use hybrid_core::dialog::ContextConfig;
use hybrid_core::interleaver::InterleaveConfig;
use hybrid_core::model::encode::{encode, Encoded};
use hybrid_core::model::train::train_step;
use hybrid_core::model::{forward, generate, Decode, Limits, ModelConfig, ModelInput, Optimizer, Parameters, StageConfig, Trainable};
use hybrid_core::synthetic::{build_example, overfit_vocab, speaker_table, synthesize, SyntheticConfig};

fn synthetic_batch(cfg: &ModelConfig) -> Vec<Encoded> {
    let vocab = &cfg.vocab;
    let (samples, speakers) = synthesize(&SyntheticConfig::default(), vocab);
    let table = speaker_table(&speakers);
    let ccfg = ContextConfig { inject_speakers: true, max_seq: cfg.max_seq, reserve: 0, system_prompt: false };
    let icfg = InterleaveConfig::new(2, 6).unwrap();
    samples.iter().map(|s| encode(&build_example(s, &table, vocab, ccfg).unwrap(), vocab, icfg).unwrap()).collect()
}

#[test]
fn full_batch_sgd_mostly_descends() {
    let cfg = ModelConfig::tiny(overfit_vocab());
    let batch = synthetic_batch(&cfg);
    assert_eq!(batch.len(), 32);
    let pilot: toml::Table = include_str!("fixtures/sgd_pilot.toml").parse().unwrap();
    let lr = pilot["lr"].as_float().unwrap();
    let steps = pilot["steps"].as_integer().unwrap() as usize;
    let min_descending = pilot["min_descending"].as_integer().unwrap() as usize;
    let stage = StageConfig { trainable: Trainable::All, lr, steps, batch_size: 32, optimizer: Optimizer::Sgd };
    let mut params = Parameters::init(&cfg);
    let mut losses = Vec::new();
    for _ in 0..=steps {
        let (next, loss) = train_step(&params, &batch, &stage).unwrap();
        params = next;
        losses.push(loss);
    }
    let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(down >= min_descending, "loss fell in {down} of {steps} steps: {losses:?}");
}

#[test]
fn later_inputs_never_change_earlier_outputs() {
    let mut cfg = ModelConfig::tiny(overfit_vocab());
    cfg.init_std = 0.2;
    let p = Parameters::init(&cfg);
    let v = &cfg.vocab;
    let base = vec![
        ModelInput::Text(v.role_marker_ids.user),
        ModelInput::Text(3),
        ModelInput::Feature(vec![0.1, 0.2, -0.3, 0.0, 1.0, 0.5]),
        ModelInput::Text(v.role_marker_ids.assistant),
        ModelInput::Speaker(vec![0.25; 8]),
        ModelInput::Audio(vec![1, 2, 3, 4]),
    ];
    let full = forward(&p, &base).unwrap();
    for cut in 1..base.len() {
        let mut changed = base[..cut].to_vec();
        changed.push(ModelInput::Text(9));
        let fp = forward(&p, &changed).unwrap();
        for t in 0..cut {
            assert_eq!(fp.head0(t), full.head0(t), "position {t} after cut {cut}");
            for j in 1..4 {
                assert_eq!(fp.head(j, t), full.head(j, t));
            }
        }
    }
}

#[test]
fn greedy_generation_is_reproducible() {
    let mut cfg = ModelConfig::tiny(overfit_vocab());
    cfg.init_std = 0.3;
    cfg.seed = 4;
    let p = Parameters::init(&cfg);
    let q = Parameters::init(&cfg);
    assert_eq!(p, q);
    let v = &cfg.vocab;
    let ctx = vec![ModelInput::Text(v.role_marker_ids.user), ModelInput::Text(5), ModelInput::Text(v.role_marker_ids.assistant)];
    let icfg = InterleaveConfig::new(2, 6).unwrap();
    let limits = Limits { max_text: 8, max_frames: 12 };
    let a = generate(&p, &ctx, icfg, Decode::Greedy, limits).unwrap();
    let b = generate(&q, &ctx, icfg, Decode::Greedy, limits).unwrap();
    assert_eq!(a, b);
    let t = |seed| generate(&p, &ctx, icfg, Decode::Temperature { tau: 1.0, seed }, limits).unwrap();
    assert_eq!(t(1), t(1));
}
