//! Pre-norm transformer with information sinks and a sink-to-sink attention bias.
//!
//! Each bias-enabled layer projects the normalized hidden rows of the sink
//! slots through its own query/key maps, forms a per-head `k×k` score block
//! scaled by `1/sqrt(d_model / n_heads)`, scatters it into the `n×n` score
//! matrix at the sink coordinates, and only then applies the causal mask and
//! the softmax.

mod checkpoint;
mod config;
pub mod reference;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Graph, NumericsError, ParamId, ParamStore, Tensor, Var};
use crate::retrieval::{Entry, SignalKind, SinkDescriptor, TokenSequence};
use crate::scalar::Scalar;
use crate::textdata::PAD;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{ArchMode, ModelConfig, Pooling, Preset, DECODER_PRESET, ENCODER_PRESET};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_positions = {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("sink signal {signal} outside [0, {d_max}]")]
    SignalOutOfRange { signal: u32, d_max: u32 },
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("sink_mean pooling needs at least one sink")]
    NoSinks,
    #[error("last_token pooling requires causal mode")]
    LastTokenNeedsCausal,
    #[error("layer {0} has no sink bias parameters")]
    NoBiasLayer(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug)]
struct LayerParams {
    ln1_gain: ParamId,
    ln1_shift: ParamId,
    query: ParamId,
    query_b: ParamId,
    key: ParamId,
    key_b: ParamId,
    value: ParamId,
    value_b: ParamId,
    out: ParamId,
    out_b: ParamId,
    ln2_gain: ParamId,
    ln2_shift: ParamId,
    ff_in: ParamId,
    ff_in_b: ParamId,
    ff_out: ParamId,
    ff_out_b: ParamId,
    /// Sink-bias query/key maps, present only for bias layers.
    bias: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
struct ParamIds {
    token_embed: ParamId,
    pos_embed: ParamId,
    generic_sink: ParamId,
    sink_table: ParamId,
    sink_proj: ParamId,
    sink_proj_b: ParamId,
    layers: Vec<LayerParams>,
    final_gain: ParamId,
    final_shift: ParamId,
    head: ParamId,
    head_b: ParamId,
}

/// Named parameter shapes in registration order.
fn param_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = c.d_model;
    let mut v = vec![
        ("token_embed".to_string(), vec![c.vocab_size, d]),
        ("pos_embed".to_string(), vec![c.max_positions, d]),
        ("generic_sink".to_string(), vec![1, d]),
        ("sink_table".to_string(), vec![c.d_max as usize + 1, c.sink_embed_dim]),
        ("sink_proj".to_string(), vec![c.sink_embed_dim, d]),
        ("sink_proj_b".to_string(), vec![d]),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        v.extend([
            (p("ln1_gain"), vec![d]),
            (p("ln1_shift"), vec![d]),
            (p("query"), vec![d, d]),
            (p("query_b"), vec![d]),
            (p("key"), vec![d, d]),
            (p("key_b"), vec![d]),
            (p("value"), vec![d, d]),
            (p("value_b"), vec![d]),
            (p("out"), vec![d, d]),
            (p("out_b"), vec![d]),
            (p("ln2_gain"), vec![d]),
            (p("ln2_shift"), vec![d]),
            (p("ff_in"), vec![d, c.d_ff]),
            (p("ff_in_b"), vec![c.d_ff]),
            (p("ff_out"), vec![c.d_ff, d]),
            (p("ff_out_b"), vec![d]),
        ]);
        if c.has_bias(l) {
            v.push((p("sink_bias_query"), vec![d, d]));
            v.push((p("sink_bias_key"), vec![d, d]));
        }
    }
    v.extend([
        ("final_gain".to_string(), vec![d]),
        ("final_shift".to_string(), vec![d]),
        ("head".to_string(), vec![d, 1]),
        ("head_b".to_string(), vec![1]),
    ]);
    v
}

fn initial_std(name: &str, c: &ModelConfig) -> Option<f64> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if leaf.ends_with("_b") || leaf.ends_with("_shift") {
        return None;
    }
    if leaf.ends_with("_gain") {
        return Some(f64::NAN);
    }
    Some(match leaf {
        "sink_proj" => 1.0 / (c.sink_embed_dim as f64).sqrt(),
        "out" | "ff_out" => INIT_STD / (2.0 * c.n_layers.max(1) as f64).sqrt(),
        _ => INIT_STD,
    })
}

impl ParamIds {
    fn resolve<F: Scalar>(store: &ParamStore<F>, c: &ModelConfig) -> Result<Self, ModelError> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))
        };
        let layers = (0..c.n_layers)
            .map(|l| {
                let p = |s: &str| get(&format!("layers.{l}.{s}"));
                Ok(LayerParams {
                    ln1_gain: p("ln1_gain")?,
                    ln1_shift: p("ln1_shift")?,
                    query: p("query")?,
                    query_b: p("query_b")?,
                    key: p("key")?,
                    key_b: p("key_b")?,
                    value: p("value")?,
                    value_b: p("value_b")?,
                    out: p("out")?,
                    out_b: p("out_b")?,
                    ln2_gain: p("ln2_gain")?,
                    ln2_shift: p("ln2_shift")?,
                    ff_in: p("ff_in")?,
                    ff_in_b: p("ff_in_b")?,
                    ff_out: p("ff_out")?,
                    ff_out_b: p("ff_out_b")?,
                    bias: if c.has_bias(l) {
                        Some((p("sink_bias_query")?, p("sink_bias_key")?))
                    } else {
                        None
                    },
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self {
            token_embed: get("token_embed")?,
            pos_embed: get("pos_embed")?,
            generic_sink: get("generic_sink")?,
            sink_table: get("sink_table")?,
            sink_proj: get("sink_proj")?,
            sink_proj_b: get("sink_proj_b")?,
            layers,
            final_gain: get("final_gain")?,
            final_shift: get("final_shift")?,
            head: get("head")?,
            head_b: get("head_b")?,
        })
    }
}

/// Post-softmax attention of one head in one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord<F> {
    pub layer: usize,
    pub head: usize,
    pub matrix: Tensor<F>,
    pub sink_positions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardOptions {
    /// Enables dropout.
    pub training: bool,
    /// Keeps every post-softmax attention matrix.
    pub capture: bool,
    /// Overrides the configured pooling, e.g. sink-only pooling in stage one.
    pub pooling: Option<Pooling>,
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            training: false,
            capture: false,
            pooling: None,
            dropout_seed: 0,
        }
    }

    pub fn capturing() -> Self {
        Self {
            capture: true,
            ..Self::eval()
        }
    }

    pub fn train(dropout_seed: u64) -> Self {
        Self {
            training: true,
            dropout_seed,
            ..Self::eval()
        }
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = Some(pooling);
        self
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<F> {
    pub logit: F,
    pub pooled: Vec<F>,
    /// Final normalized hidden states `H`, `n×d_model`.
    pub hidden: Tensor<F>,
    pub records: Option<Vec<AttentionRecord<F>>>,
}

/// Graph nodes produced by [`Model::build`].
#[derive(Clone, Debug)]
pub struct BuiltForward<F> {
    pub logit: Var,
    pub pooled: Var,
    pub hidden: Var,
    pub records: Vec<AttentionRecord<F>>,
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    ids: ParamIds,
}

impl<F: Scalar> Model<F> {
    /// Seeded initialization: Gaussian matrices, unit gains, zero shifts.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in param_layout(&config) {
            let t = match initial_std(&name, &config) {
                None => Tensor::zeros(shape),
                Some(s) if s.is_nan() => Tensor::full(shape, F::one()),
                Some(s) => Tensor::randn(shape, s, &mut rng),
            };
            store.register(name, t)?;
        }
        let ids = ParamIds::resolve(&store, &config)?;
        Ok(Self {
            config,
            params: store,
            ids,
        })
    }

    /// Rebuilds from named parameters, checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            let id = params
                .id(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
        }
        let ids = ParamIds::resolve(&params, &config)?;
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Same weights in another scalar width.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        let mut store = ParamStore::new();
        for (_, p) in self.params.iter() {
            store.register(p.name.clone(), p.value.cast()).expect("unique names");
        }
        Model::from_params(self.config.clone(), store).expect("same layout")
    }

    /// Sets the sink-bias query/key maps of `layer` to zero.
    pub fn zero_sink_bias(&mut self, layer: usize) -> Result<(), ModelError> {
        let (q, k) = self.ids.layers[layer].bias.ok_or(ModelError::NoBiasLayer(layer))?;
        for id in [q, k] {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = F::zero());
        }
        Ok(())
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<(), ModelError> {
        if seq.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if seq.len() > self.config.max_positions {
            return Err(ModelError::SequenceTooLong {
                len: seq.len(),
                max: self.config.max_positions,
            });
        }
        for e in &seq.entries {
            match e {
                Entry::Token(t) if *t as usize >= self.config.vocab_size => {
                    return Err(ModelError::TokenOutOfRange(*t));
                }
                Entry::Sink(d) if d.kind != SignalKind::Generic && d.raw_signal > self.config.d_max => {
                    return Err(ModelError::SignalOutOfRange {
                        signal: d.raw_signal,
                        d_max: self.config.d_max,
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Embedding of one sink slot: the learned generic vector for generic
    /// sinks, otherwise the signal's table row pushed through the linear map.
    pub fn sink_embed(&self, descriptor: &SinkDescriptor) -> Result<Vec<F>, ModelError> {
        let mut g = Graph::new();
        let v = self.sink_rows(&mut g, std::slice::from_ref(descriptor))?;
        Ok(g.value(v).data().to_vec())
    }

    fn sink_rows(&self, g: &mut Graph<F>, sinks: &[SinkDescriptor]) -> Result<Var, ModelError> {
        let info: Vec<usize> = sinks
            .iter()
            .filter(|d| d.kind != SignalKind::Generic)
            .map(|d| {
                if d.raw_signal > self.config.d_max {
                    Err(ModelError::SignalOutOfRange {
                        signal: d.raw_signal,
                        d_max: self.config.d_max,
                    })
                } else {
                    Ok(d.raw_signal as usize)
                }
            })
            .collect::<Result<_, _>>()?;
        let n_generic = sinks.len() - info.len();
        let generic = (n_generic > 0).then(|| {
            g.param_rows(&self.params, self.ids.generic_sink, &vec![0; n_generic])
        });
        let projected = (!info.is_empty()).then(|| {
            let rows = g.param_rows(&self.params, self.ids.sink_table, &info);
            let w = g.param(&self.params, self.ids.sink_proj);
            let b = g.param(&self.params, self.ids.sink_proj_b);
            let m = g.matmul(rows, w);
            g.add_row(m, b)
        });
        Ok(match (generic, projected) {
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (Some(a), Some(b)) => {
                // restore descriptor order
                let both = g.concat_rows(&[a, b]);
                let (mut gi, mut ii) = (0, n_generic);
                let order: Vec<usize> = sinks
                    .iter()
                    .map(|d| {
                        if d.kind == SignalKind::Generic {
                            gi += 1;
                            gi - 1
                        } else {
                            ii += 1;
                            ii - 1
                        }
                    })
                    .collect();
                g.select_rows(both, &order)
            }
            (None, None) => unreachable!("called with at least one sink"),
        })
    }

    /// `X` (n×d_model): token or sink embedding plus the positional row.
    pub fn input_embed(&self, seq: &TokenSequence) -> Result<Tensor<F>, ModelError> {
        let mut g = Graph::new();
        let x = self.embed_graph(&mut g, seq)?;
        Ok(g.value(x).clone())
    }

    fn embed_graph(&self, g: &mut Graph<F>, seq: &TokenSequence) -> Result<Var, ModelError> {
        self.check_sequence(seq)?;
        let n = seq.len();
        let ids: Vec<usize> = seq
            .entries
            .iter()
            .map(|e| match e {
                Entry::Token(t) => *t as usize,
                Entry::Sink(_) => PAD as usize,
            })
            .collect();
        let tokens = g.param_rows(&self.params, self.ids.token_embed, &ids);
        let sinks: Vec<SinkDescriptor> = seq.sinks().copied().collect();
        let content = if sinks.is_empty() {
            tokens
        } else {
            let sink_rows = self.sink_rows(g, &sinks)?;
            let stacked = g.concat_rows(&[tokens, sink_rows]);
            let mut next_sink = n;
            let order: Vec<usize> = seq
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| match e {
                    Entry::Token(_) => i,
                    Entry::Sink(_) => {
                        next_sink += 1;
                        next_sink - 1
                    }
                })
                .collect();
            g.select_rows(stacked, &order)
        };
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.param_rows(&self.params, self.ids.pos_embed, &positions);
        Ok(g.add(content, pos))
    }

    /// Per-head sink-to-sink score blocks `(X_L Wq_h)(X_L Wk_h)ᵀ / sqrt(d_model/n_heads)`
    /// for rows `sink_positions` of `hidden`. No softmax is applied.
    pub fn compute_bias(
        &self,
        hidden: &Tensor<F>,
        sink_positions: &[usize],
        layer: usize,
    ) -> Result<Vec<Tensor<F>>, ModelError> {
        let mut g = Graph::new();
        let h = g.constant(hidden.clone());
        let heads = self.bias_graph(&mut g, h, sink_positions, layer)?;
        Ok(heads.into_iter().map(|v| g.value(v).clone()).collect())
    }

    fn bias_graph(&self, g: &mut Graph<F>, h: Var, sinks: &[usize], layer: usize) -> Result<Vec<Var>, ModelError> {
        let (wq, wk) = self.ids.layers[layer].bias.ok_or(ModelError::NoBiasLayer(layer))?;
        let dh = self.config.head_dim();
        if sinks.is_empty() {
            return Ok((0..self.config.n_heads)
                .map(|_| g.constant(Tensor::zeros(vec![0, 0])))
                .collect());
        }
        let xl = g.select_rows(h, sinks);
        let wq = g.param(&self.params, wq);
        let wk = g.param(&self.params, wk);
        let q = g.matmul(xl, wq);
        let k = g.matmul(xl, wk);
        let scale = F::one() / F::from_usize(dh).expect("head dim").sqrt();
        Ok((0..self.config.n_heads)
            .map(|head| {
                let qh = g.slice_cols(q, head * dh, dh);
                let kh = g.slice_cols(k, head * dh, dh);
                let kt = g.transpose(kh);
                let s = g.matmul(qh, kt);
                g.scale(s, scale)
            })
            .collect())
    }

    fn causal_mask(n: usize) -> Vec<bool> {
        (0..n * n).map(|idx| idx % n <= idx / n).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_graph(
        &self,
        g: &mut Graph<F>,
        x: Var,
        sinks: &[usize],
        layer: usize,
        opts: &ForwardOptions,
        rng: &mut ChaCha8Rng,
        records: &mut Vec<AttentionRecord<F>>,
    ) -> Result<Var, ModelError> {
        let p = &self.ids.layers[layer];
        let c = &self.config;
        let n = g.value(x).rows();
        let dh = c.head_dim();
        let drop = if opts.training { c.dropout } else { 0.0 };

        let gain = g.param(&self.params, p.ln1_gain);
        let shift = g.param(&self.params, p.ln1_shift);
        let h = g.layer_norm(x, gain, shift, F::of(LN_EPS));
        let proj = |g: &mut Graph<F>, w: ParamId, b: ParamId| {
            let w = g.param(&self.params, w);
            let b = g.param(&self.params, b);
            let m = g.matmul(h, w);
            g.add_row(m, b)
        };
        let q = proj(g, p.query, p.query_b);
        let k = proj(g, p.key, p.key_b);
        let v = proj(g, p.value, p.value_b);

        let bias = if c.has_bias(layer) && !sinks.is_empty() {
            let mut heads = self.bias_graph(g, h, sinks, layer)?;
            for b in &mut heads {
                *b = g.dropout(*b, drop, rng);
            }
            let mut scattered = Vec::with_capacity(heads.len());
            for b in heads {
                scattered.push(g.scatter_square(b, sinks, n)?);
            }
            Some(scattered)
        } else {
            None
        };
        let mask = (c.arch == ArchMode::Causal).then(|| Self::causal_mask(n));
        let scale = F::one() / F::from_usize(dh).expect("head dim").sqrt();

        let mut outs = Vec::with_capacity(c.n_heads);
        for head in 0..c.n_heads {
            let qh = g.slice_cols(q, head * dh, dh);
            let kh = g.slice_cols(k, head * dh, dh);
            let vh = g.slice_cols(v, head * dh, dh);
            let kt = g.transpose(kh);
            let raw = g.matmul(qh, kt);
            let mut scores = g.scale(raw, scale);
            if let Some(b) = &bias {
                scores = g.add(scores, b[head]);
            }
            let attn = g.softmax_rows(scores, mask.as_deref())?;
            if opts.capture {
                records.push(AttentionRecord {
                    layer,
                    head,
                    matrix: g.value(attn).clone(),
                    sink_positions: sinks.to_vec(),
                });
            }
            let attn = g.dropout(attn, drop, rng);
            outs.push(g.matmul(attn, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let wo = g.param(&self.params, p.out);
        let bo = g.param(&self.params, p.out_b);
        let o = g.matmul(cat, wo);
        let o = g.add_row(o, bo);
        Ok(g.add(x, o))
    }

    fn feed_forward_graph(&self, g: &mut Graph<F>, x: Var, layer: usize) -> Var {
        let p = &self.ids.layers[layer];
        let gain = g.param(&self.params, p.ln2_gain);
        let shift = g.param(&self.params, p.ln2_shift);
        let h = g.layer_norm(x, gain, shift, F::of(LN_EPS));
        let w1 = g.param(&self.params, p.ff_in);
        let b1 = g.param(&self.params, p.ff_in_b);
        let w2 = g.param(&self.params, p.ff_out);
        let b2 = g.param(&self.params, p.ff_out_b);
        let a = g.matmul(h, w1);
        let a = g.add_row(a, b1);
        let a = g.gelu(a);
        let o = g.matmul(a, w2);
        let o = g.add_row(o, b2);
        g.add(x, o)
    }

    fn pool_graph(
        &self,
        g: &mut Graph<F>,
        hidden: Var,
        mode: Pooling,
        sinks: &[usize],
    ) -> Result<Var, ModelError> {
        pool_graph(g, hidden, mode, sinks, self.config.arch)
    }

    fn head_graph(&self, g: &mut Graph<F>, pooled: Var) -> Var {
        let w = g.param(&self.params, self.ids.head);
        let b = g.param(&self.params, self.ids.head_b);
        let z = g.matmul(pooled, w);
        g.add_row(z, b)
    }

    /// Records the whole forward pass on `g`.
    pub fn build(&self, g: &mut Graph<F>, seq: &TokenSequence, opts: &ForwardOptions) -> Result<BuiltForward<F>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.dropout_seed);
        let sinks = seq.sink_positions();
        let mut x = self.embed_graph(g, seq)?;
        let mut records = Vec::new();
        for layer in 0..self.config.n_layers {
            x = self.attention_graph(g, x, &sinks, layer, opts, &mut rng, &mut records)?;
            x = self.feed_forward_graph(g, x, layer);
        }
        let gain = g.param(&self.params, self.ids.final_gain);
        let shift = g.param(&self.params, self.ids.final_shift);
        let hidden = g.layer_norm(x, gain, shift, F::of(LN_EPS));
        let mode = opts.pooling.unwrap_or(self.config.pooling);
        let pooled = self.pool_graph(g, hidden, mode, &sinks)?;
        let logit = self.head_graph(g, pooled);
        Ok(BuiltForward {
            logit,
            pooled,
            hidden,
            records,
        })
    }

    pub fn forward(&self, seq: &TokenSequence, opts: &ForwardOptions) -> Result<ForwardOutput<F>, ModelError> {
        let mut g = Graph::new();
        let built = self.build(&mut g, seq, opts)?;
        Ok(ForwardOutput {
            logit: g.value(built.logit).item(),
            pooled: g.value(built.pooled).data().to_vec(),
            hidden: g.value(built.hidden).clone(),
            records: opts.capture.then_some(built.records),
        })
    }

    /// Logit from final hidden states through pooling and the prediction head.
    pub fn logit_from_hidden(&self, hidden: &Tensor<F>, mode: Pooling, sinks: &[usize]) -> Result<F, ModelError> {
        let mut g = Graph::new();
        let h = g.constant(hidden.clone());
        let pooled = self.pool_graph(&mut g, h, mode, sinks)?;
        let z = self.head_graph(&mut g, pooled);
        Ok(g.value(z).item())
    }

    /// Captured post-softmax attention for every layer and head.
    pub fn attention_records(&self, seq: &TokenSequence) -> Result<Vec<AttentionRecord<F>>, ModelError> {
        Ok(self.forward(seq, &ForwardOptions::capturing())?.records.unwrap_or_default())
    }
}

fn pool_graph<F: Scalar>(
    g: &mut Graph<F>,
    hidden: Var,
    mode: Pooling,
    sinks: &[usize],
    arch: ArchMode,
) -> Result<Var, ModelError> {
    Ok(match mode {
        Pooling::AllMean => g.mean_rows(hidden),
        Pooling::SinkMean => {
            if sinks.is_empty() {
                return Err(ModelError::NoSinks);
            }
            let rows = g.select_rows(hidden, sinks);
            g.mean_rows(rows)
        }
        Pooling::LastToken => {
            if arch != ArchMode::Causal {
                return Err(ModelError::LastTokenNeedsCausal);
            }
            let n = g.value(hidden).rows();
            g.select_rows(hidden, &[n - 1])
        }
    })
}

/// Reduces `H` (n×d) to one row according to `mode`.
pub fn pool<F: Scalar>(
    hidden: &Tensor<F>,
    mode: Pooling,
    sink_positions: &[usize],
    arch: ArchMode,
) -> Result<Vec<F>, ModelError> {
    let mut g = Graph::new();
    let h = g.constant(hidden.clone());
    let p = pool_graph(&mut g, h, mode, sink_positions, arch)?;
    Ok(g.value(p).data().to_vec())
}

/// `scatter_bias`: a `k×k` block placed at the sink coordinates of an `n×n` zero matrix.
pub fn scatter_bias<F: Scalar>(block: &Tensor<F>, sink_positions: &[usize], n: usize) -> Result<Tensor<F>, ModelError> {
    let out = crate::numerics::scatter_square(block.data(), sink_positions, n)?;
    Ok(Tensor::matrix(n, n, out))
}
