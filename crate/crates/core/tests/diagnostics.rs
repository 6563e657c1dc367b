mod common;

use common::{random_sequence, small_config, SMALL_VOCAB};
use ctr_sink::diagnostics::{
    export_heatmap, heatmap_pgm, layerwise_profile, matrix_csv, metric_rows, metrics_csv, p_between, p_focused,
    summarize,
};
use ctr_sink::model::{ArchMode, Model, Pooling};
use ctr_sink::numerics::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row_stochastic(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut d: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    for row in d.chunks_mut(n) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::matrix(n, n, d)
}

fn subset(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).filter(|_| rng.random_bool(0.4)).collect()
}

proptest! {
    #[test]
    fn metric_ordering_and_permutation_invariance(seed in 0u64..10_000, n in 1usize..12) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = row_stochastic(n, &mut r);
        let set = subset(n, &mut r);
        let f = p_focused(&a, &set).unwrap();
        let b = p_between(&a, &set).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
        prop_assert!(b <= f + 1e-12 && b >= 0.0);
        // swap two positions outside the set, both as rows and as columns
        let outside: Vec<usize> = (0..n).filter(|i| !set.contains(i)).collect();
        if outside.len() >= 2 {
            let (x, y) = (outside[0], outside[1]);
            let perm: Vec<usize> = (0..n).map(|i| if i == x { y } else if i == y { x } else { i }).collect();
            let d: Vec<f64> = (0..n * n).map(|idx| a.get(perm[idx / n], perm[idx % n])).collect();
            let p = Tensor::matrix(n, n, d);
            prop_assert!((p_focused(&p, &set).unwrap() - f).abs() < 1e-12);
            prop_assert!((p_between(&p, &set).unwrap() - b).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_profile_recomputes_from_records() {
    let m: Model<f64> = Model::new(small_config(ArchMode::Bidirectional, Pooling::AllMean), 1).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let s = random_sequence(&mut r, 14, 4, SMALL_VOCAB, 32);
    let records = m.attention_records(&s).unwrap();
    let sinks = s.sink_positions();
    let profile = layerwise_profile(&records, &sinks).unwrap();
    assert_eq!(profile.len(), m.config().n_layers);
    for (l, p) in profile.iter().enumerate() {
        assert_eq!(p.layer, l);
        let heads: Vec<_> = records.iter().filter(|r| r.layer == l).collect();
        let f: f64 = heads.iter().map(|r| p_focused(&r.matrix, &sinks).unwrap()).sum::<f64>() / heads.len() as f64;
        let b: f64 = heads.iter().map(|r| p_between(&r.matrix, &sinks).unwrap()).sum::<f64>() / heads.len() as f64;
        assert!((p.p_f - f).abs() < 1e-15 && (p.p_b - b).abs() < 1e-15);
    }
    let single = layerwise_profile(&records[..1], &sinks).unwrap();
    assert_eq!(single[0].p_f, p_focused(&records[0].matrix, &sinks).unwrap());

    let rows = metric_rows("u0", &records).unwrap();
    let summary = summarize(&rows);
    for (s, p) in summary.iter().zip(&profile) {
        assert!((s.p_f.mean - p.p_f).abs() < 1e-15);
        assert!(s.p_f.std >= 0.0);
    }
    let csv = metrics_csv(&rows);
    assert!(csv.starts_with("sample_id,layer,head,p_f,p_b\n"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn heatmap_files_round_trip_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let a = row_stochastic(9, &mut r);
    let (pgm, csv) = export_heatmap(&a, &dir.path().join("h.pgm"), Some(&[2, 5])).unwrap();
    let first = (std::fs::read(&pgm).unwrap(), std::fs::read(&csv).unwrap());
    export_heatmap(&a, &dir.path().join("h.pgm"), Some(&[2, 5])).unwrap();
    assert_eq!(first, (std::fs::read(&pgm).unwrap(), std::fs::read(&csv).unwrap()));
    let text = String::from_utf8(first.1).unwrap();
    for (i, line) in text.lines().enumerate() {
        for (j, v) in line.split(',').enumerate() {
            let v: f64 = v.parse().unwrap();
            assert!((v - a.get(i, j)).abs() < 5e-7);
        }
    }
    assert_eq!(text, matrix_csv(&a));
    let zero = heatmap_pgm(&Tensor::<f64>::zeros(vec![3, 3]), None).unwrap();
    assert!(zero[b"P5\n3 3\n255\n".len()..].iter().all(|&p| p == 0));
    assert!(export_heatmap(&a, &dir.path().join("missing/dir/h.pgm"), None).is_err());
}
