//! Plain pre-norm transformer on token ids, with no sinks and no bias.
//!
//! Evaluation mode only. It reads the same named parameters as [`Model`] and
//! calls the same slice kernels in the same order, so on sink-free input with
//! the bias disabled it reproduces [`Model::forward`] to the last bit.

use crate::numerics::kernels;
use crate::scalar::Scalar;

use super::{ArchMode, Model, ModelError, Pooling, LN_EPS};

struct Weights<'a, F: Scalar> {
    model: &'a Model<F>,
}

impl<'a, F: Scalar> Weights<'a, F> {
    fn get(&self, name: &str) -> Result<&'a [F], ModelError> {
        let store = self.model.params();
        let id = store
            .id(name)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
        Ok(store.get(id).data())
    }
}

fn add_row<F: Scalar>(x: &mut [F], row: &[F]) {
    for chunk in x.chunks_mut(row.len()) {
        for (o, &b) in chunk.iter_mut().zip(row) {
            *o += b;
        }
    }
}

fn linear<F: Scalar>(x: &[F], w: &[F], b: &[F], n: usize, d_in: usize, d_out: usize) -> Vec<F> {
    let mut y = kernels::matmul(x, w, n, d_in, d_out);
    add_row(&mut y, b);
    y
}

fn columns<F: Scalar>(x: &[F], n: usize, width: usize, start: usize, len: usize) -> Vec<F> {
    (0..n)
        .flat_map(|i| x[i * width + start..i * width + start + len].iter().copied())
        .collect()
}

/// Logit of a standard transformer over `tokens`.
pub fn reference_logit<F: Scalar>(model: &Model<F>, tokens: &[u32], pooling: Pooling) -> Result<F, ModelError> {
    let c = model.config();
    let w = Weights { model };
    let n = tokens.len();
    if n == 0 {
        return Err(ModelError::EmptySequence);
    }
    if n > c.max_positions {
        return Err(ModelError::SequenceTooLong {
            len: n,
            max: c.max_positions,
        });
    }
    let d = c.d_model;
    let dh = c.head_dim();
    let eps = F::of(LN_EPS);

    let tok = w.get("token_embed")?;
    let pos = w.get("pos_embed")?;
    let mut x = Vec::with_capacity(n * d);
    for (i, &t) in tokens.iter().enumerate() {
        let t = t as usize;
        if t >= c.vocab_size {
            return Err(ModelError::TokenOutOfRange(t as u32));
        }
        x.extend(tok[t * d..(t + 1) * d].iter().zip(&pos[i * d..(i + 1) * d]).map(|(&a, &b)| a + b));
    }

    let mask: Option<Vec<bool>> =
        (c.arch == ArchMode::Causal).then(|| (0..n * n).map(|idx| idx % n <= idx / n).collect());
    let scale = F::one() / F::from_usize(dh).expect("head dim").sqrt();

    for l in 0..c.n_layers {
        let p = |s: &str| w.get(&format!("layers.{l}.{s}"));
        let (h, _) = kernels::layer_norm(&x, p("ln1_gain")?, p("ln1_shift")?, n, d, eps);
        let q = linear(&h, p("query")?, p("query_b")?, n, d, d);
        let k = linear(&h, p("key")?, p("key_b")?, n, d, d);
        let v = linear(&h, p("value")?, p("value_b")?, n, d, d);
        let mut cat = vec![F::zero(); n * d];
        for head in 0..c.n_heads {
            let qh = columns(&q, n, d, head * dh, dh);
            let kh = columns(&k, n, d, head * dh, dh);
            let vh = columns(&v, n, d, head * dh, dh);
            let kt = kernels::transpose(&kh, n, dh);
            let scores: Vec<F> = kernels::matmul(&qh, &kt, n, dh, n).into_iter().map(|s| s * scale).collect();
            let attn = kernels::softmax_rows(&scores, n, n, mask.as_deref())?;
            let o = kernels::matmul(&attn, &vh, n, n, dh);
            for i in 0..n {
                cat[i * d + head * dh..i * d + (head + 1) * dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
            }
        }
        let o = linear(&cat, p("out")?, p("out_b")?, n, d, d);
        x = x.iter().zip(&o).map(|(&a, &b)| a + b).collect();

        let (h, _) = kernels::layer_norm(&x, p("ln2_gain")?, p("ln2_shift")?, n, d, eps);
        let mut a = linear(&h, p("ff_in")?, p("ff_in_b")?, n, d, c.d_ff);
        a.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let o = linear(&a, p("ff_out")?, p("ff_out_b")?, n, c.d_ff, d);
        x = x.iter().zip(&o).map(|(&a, &b)| a + b).collect();
    }

    let (hidden, _) = kernels::layer_norm(&x, w.get("final_gain")?, w.get("final_shift")?, n, d, eps);
    let pooled: Vec<F> = match pooling {
        Pooling::AllMean => {
            let mut out = vec![F::zero(); d];
            for i in 0..n {
                for (o, &v) in out.iter_mut().zip(&hidden[i * d..(i + 1) * d]) {
                    *o += v;
                }
            }
            let inv = F::one() / F::from_usize(n).expect("row count");
            out.iter_mut().for_each(|o| *o *= inv);
            out
        }
        Pooling::LastToken => {
            if c.arch != ArchMode::Causal {
                return Err(ModelError::LastTokenNeedsCausal);
            }
            hidden[(n - 1) * d..].to_vec()
        }
        Pooling::SinkMean => return Err(ModelError::NoSinks),
    };
    let z = linear(&pooled, w.get("head")?, w.get("head_b")?, 1, d, 1);
    Ok(z[0])
}
