mod common;

use common::{random_sequence, SMALL_VOCAB};
use ctr_sink::model::{ArchMode, Model, ModelConfig, Pooling};
use ctr_sink::numerics::ParamStore;
use ctr_sink::training::{
    auc, bce_loss, evaluate, predict, steps_per_epoch, train_stage, two_stage_train, Example, StageConfig,
    TrainError, TwoStageConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn examples(n: usize, k: usize, seed: u64) -> Vec<Example> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Example {
            seq: random_sequence(&mut r, 10, k, SMALL_VOCAB, 16),
            label: (i % 2) as u8,
        })
        .collect()
}

fn small_model(seed: u64) -> Model<f32> {
    let cfg = ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        max_positions: 32,
        sink_embed_dim: 8,
        d_max: 16,
        ..ModelConfig::toy(SMALL_VOCAB).with_layers(2)
    };
    Model::new(cfg, seed).unwrap()
}

fn same_params(a: &ParamStore<f32>, b: &ParamStore<f32>) -> bool {
    a.iter().zip(b.iter()).all(|((_, x), (_, y))| x.value == y.value)
}

#[test]
fn bce_reference_points() {
    assert!((bce_loss(0.0f64, 0) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((bce_loss(0.0f64, 1) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(bce_loss(20.0f64, 1) <= 1e-8);
    assert!(bce_loss(-800.0f64, 0).is_finite());
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let z: f64 = r.random_range(-12.0..12.0);
        let y = r.random_range(0..2u8);
        let p = 1.0 / (1.0 + (-z).exp());
        let direct = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        assert!((bce_loss(z, y) - direct).abs() < 1e-9 * direct.max(1.0));
    }
}

#[test]
fn auc_reference_points() {
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(TrainError::SingleClass { .. })));
    assert!(matches!(auc(&[0.1], &[1, 0]), Err(TrainError::LengthMismatch(1, 2))));
}

proptest! {
    #[test]
    fn auc_matches_pair_counting(data in prop::collection::vec((0u8..6, 0u8..2), 2..60)) {
        let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) * 0.25).collect();
        let mut labels: Vec<u8> = data.iter().map(|&(_, l)| l).collect();
        // guarantee both classes
        labels[0] = 0;
        labels[1] = 1;
        let got = auc(&scores, &labels).unwrap();
        prop_assert!((got - pair_count_auc(&scores, &labels)).abs() < 1e-12);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&warped, &labels).unwrap(), got);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = examples(1, 2, 2);
    let mut m = small_model(2);
    let before = m.params().clone();
    let stage = StageConfig {
        epochs: 1,
        peak_lr: 0.0,
        ..Default::default()
    };
    train_stage(&mut m, &data, None, &stage, 0, 0).unwrap();
    assert!(same_params(&before, m.params()));
}

#[test]
fn training_is_deterministic_and_thread_count_independent() {
    let data = examples(40, 3, 3);
    let stage = StageConfig {
        epochs: 2,
        batch_size: 12,
        seed: 3,
        ..Default::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut m = small_model(3);
            let log = train_stage(&mut m, &data, Some(&data), &stage, 0, 0).unwrap();
            (m, log)
        })
    };
    let (m1, log1) = run(1);
    let (m3, log3) = run(3);
    assert_eq!(log1, log3);
    assert!(same_params(m1.params(), m3.params()));
    assert!(log1.records.iter().all(|r| r.val_auc.is_some()));
}

#[test]
fn memorizes_a_small_task_and_evaluates_cleanly() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<Example> = (0..64)
        .map(|i| Example {
            seq: random_sequence(&mut r, 12, 3, SMALL_VOCAB, 16),
            label: (i % 2) as u8,
        })
        .collect();
    let mut m = small_model(4);
    let stage = StageConfig {
        epochs: 200,
        batch_size: 16,
        peak_lr: 3e-3,
        seed: 4,
        ..Default::default()
    };
    let log = train_stage(&mut m, &data, None, &stage, 0, 0).unwrap();
    let best = log.records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best epoch loss {best}");
    let eval = evaluate(&m, &data).unwrap();
    assert!(eval.auc >= 0.99, "train auc {}", eval.auc);
    assert_eq!(evaluate(&m, &data).unwrap(), eval);
}

#[test]
fn sink_pooling_stage_rejects_sink_free_data() {
    let data = examples(4, 0, 5);
    let mut m = small_model(5);
    let stage = StageConfig {
        pooling: Some(Pooling::SinkMean),
        epochs: 1,
        ..Default::default()
    };
    assert_eq!(
        train_stage(&mut m, &data, None, &stage, 1, 0),
        Err(TrainError::MissingSinks(0))
    );
    let cfg = TwoStageConfig {
        stage1: StageConfig::default(),
        stage2: StageConfig::default(),
    };
    assert!(matches!(two_stage_train(&mut m, &data, None, &cfg), Err(TrainError::MissingSinks(0))));
}

#[test]
fn two_stage_step_accounting_and_degenerate_first_stage() {
    let data = examples(30, 2, 6);
    let base = StageConfig {
        batch_size: 8,
        seed: 6,
        ..Default::default()
    };
    let two = TwoStageConfig {
        stage1: StageConfig { epochs: 3, ..base.clone() },
        stage2: StageConfig { epochs: 3, ..base.clone() },
    };
    let mut m = small_model(6);
    let log = two_stage_train(&mut m, &data, None, &two).unwrap();
    let single = StageConfig { epochs: 6, ..base.clone() };
    let mut s = small_model(6);
    let slog = train_stage(&mut s, &data, None, &single, 2, 0).unwrap();
    assert_eq!(log.steps, 6 * steps_per_epoch(30, 8));
    assert_eq!(log.steps, slog.steps);
    assert_eq!(log.records.last().unwrap().step, log.steps);
    assert_eq!(log.records.iter().filter(|r| r.stage == 1).count(), 3);

    let degenerate = TwoStageConfig {
        stage1: StageConfig { epochs: 0, ..base.clone() },
        stage2: StageConfig { epochs: 2, ..base.clone() },
    };
    let mut a = small_model(7);
    let mut b = small_model(7);
    let la = two_stage_train(&mut a, &data, None, &degenerate).unwrap();
    let lb = train_stage(&mut b, &data, None, &degenerate.stage2, 2, 0).unwrap();
    assert_eq!(la, lb);
    assert!(same_params(a.params(), b.params()));
}

#[test]
fn evaluation_ignores_dropout_and_needs_both_classes() {
    let data = examples(12, 2, 8);
    let m = small_model(8);
    assert_eq!(predict(&m, &data, None).unwrap(), evaluate(&m, &data).unwrap().scores);
    let ones: Vec<Example> = data.iter().filter(|e| e.label == 1).cloned().collect();
    assert!(matches!(evaluate(&m, &ones), Err(TrainError::SingleClass { .. })));
    let causal = Model::<f32>::new(
        ModelConfig {
            arch: ArchMode::Causal,
            pooling: Pooling::LastToken,
            ..m.config().clone()
        },
        8,
    )
    .unwrap();
    assert!(evaluate(&causal, &data).unwrap().auc.is_finite());
}

#[test]
fn log_lines_have_the_documented_fields() {
    let data = examples(10, 2, 9);
    let mut m = small_model(9);
    let log = train_stage(&mut m, &data, Some(&data), &StageConfig { epochs: 2, ..Default::default() }, 2, 5).unwrap();
    let text = log.to_json_lines();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (epoch, l) in lines.iter().enumerate() {
        let keys: Vec<&str> = l.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 6);
        for k in ["stage", "epoch", "step", "lr", "loss", "val_auc"] {
            assert!(keys.contains(&k));
        }
        assert_eq!(l["epoch"], epoch);
        assert_eq!(l["stage"], 2);
    }
    assert_eq!(lines[1]["step"], 5 + 2 * steps_per_epoch(10, 32));
}
