#![allow(dead_code)]

use ctr_sink::model::{ArchMode, ForwardOptions, Model, ModelConfig, Pooling};
use ctr_sink::numerics::gradcheck::{central_differences, max_relative_error, FD_STEP};
use ctr_sink::numerics::{Gradients, Graph, Tensor};
use ctr_sink::retrieval::{Entry, SignalKind, SinkDescriptor, TokenSequence};
use ctr_sink::training::bce_loss;
use ctr_sink::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SMALL_VOCAB: usize = 24;

/// Two layers, width 8: the gradient-check model.
pub fn tiny_config(arch: ArchMode, pooling: Pooling) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 12,
        vocab_size: SMALL_VOCAB,
        max_positions: 16,
        arch,
        sink_embed_dim: 4,
        d_max: 10,
        bias_layers: vec![0, 1],
        dropout: 0.1,
        pooling,
    }
}

/// Mid-size model for property runs.
pub fn small_config(arch: ArchMode, pooling: Pooling) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        d_ff: 32,
        vocab_size: SMALL_VOCAB,
        max_positions: 64,
        arch,
        sink_embed_dim: 8,
        d_max: 32,
        bias_layers: vec![0, 1],
        dropout: 0.1,
        pooling,
    }
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> SignalKind {
    [SignalKind::Temporal, SignalKind::Similarity, SignalKind::Random, SignalKind::Generic][rng.random_range(0..4)]
}

/// `n` slots, `k` of them sinks at random positions, tokens drawn from the
/// non-reserved part of the vocabulary.
pub fn random_sequence(rng: &mut ChaCha8Rng, n: usize, k: usize, vocab: usize, d_max: u32) -> TokenSequence {
    assert!(k <= n);
    let mut is_sink = vec![false; n];
    let mut placed = 0;
    while placed < k {
        let p = rng.random_range(0..n);
        if !is_sink[p] {
            is_sink[p] = true;
            placed += 1;
        }
    }
    let kind = random_kind(rng);
    let entries = (0..n)
        .map(|i| {
            if is_sink[i] {
                Entry::Sink(SinkDescriptor {
                    position: i,
                    raw_signal: rng.random_range(0..=d_max),
                    kind,
                })
            } else {
                Entry::Token(rng.random_range(5..vocab as u32))
            }
        })
        .collect();
    TokenSequence {
        entries,
        prompt_len: 0,
        spans: Vec::new(),
    }
}

/// Replaces every parameter with N(0, std²) draws so that gradients are O(1).
pub fn scramble<F: Scalar>(model: &mut Model<F>, std: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let shape = model.params().get(id).shape().to_vec();
        *model.params_mut().get_mut(id) = Tensor::randn(shape, std, rng);
    }
}

/// Analytic parameter gradients of the BCE loss in evaluation mode.
pub fn analytic_grads(model: &Model<f64>, seq: &TokenSequence, label: u8) -> (f64, Gradients<f64>) {
    let mut g = Graph::new();
    let built = model.build(&mut g, seq, &ForwardOptions::eval()).unwrap();
    let loss = g.bce_with_logits(built.logit, f64::from(label));
    g.backward(loss).unwrap();
    let mut grads = Gradients::zeros_like(model.params());
    g.accumulate_param_grads(&mut grads, 1.0);
    (g.value(loss).item(), grads)
}

/// Worst relative error over every model parameter.
pub fn model_gradcheck(model: &Model<f64>, seq: &TokenSequence, label: u8) -> f64 {
    let (_, grads) = analytic_grads(model, seq, label);
    let mut probe = model.clone();
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let base = model.params().get(id).data().to_vec();
        let numeric = central_differences(
            |x| {
                probe.params_mut().get_mut(id).data_mut().copy_from_slice(x);
                let z = probe.forward(seq, &ForwardOptions::eval()).unwrap().logit;
                bce_loss(z, label)
            },
            &base,
            FD_STEP,
        );
        probe.params_mut().get_mut(id).data_mut().copy_from_slice(&base);
        worst = worst.max(max_relative_error(grads.get(id), &numeric));
    }
    worst
}
