//! AdamW with decoupled weight decay, and the linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::{Gradients, ParamStore};
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Peak learning rate of the encoder-style preset.
pub const ENCODER_PRESET_LR: f64 = 1e-4;
/// Peak learning rate of the decoder-style preset.
pub const DECODER_PRESET_LR: f64 = 1e-5;

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
    step: u64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(store: &ParamStore<F>, config: AdamWConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| vec![F::zero(); p.value.numel()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. The counter advances before bias
    /// correction; decay scales the parameter directly.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64) -> Result<(), NumericsError> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![store.len()],
                got: vec![grads.len()],
            });
        }
        for (id, p) in store.iter() {
            let n = p.value.numel();
            if grads.get(id).len() != n || self.first[id.0].len() != n {
                return Err(NumericsError::ShapeMismatch {
                    expected: p.value.shape().to_vec(),
                    got: vec![grads.get(id).len()],
                });
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let one = F::one();
        let bc1 = F::of(1.0 - c.beta1.powi(t));
        let bc2 = F::of(1.0 - c.beta2.powi(t));
        let eps = F::of(c.eps);
        let lr_f = F::of(lr);
        let decay = F::of(1.0 - lr * c.weight_decay);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] * decay - lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak_lr` over the first `warm_ratio · total_steps`
/// steps, then linear decay to 0 at `total_steps`.
pub fn lr_at_step(step: usize, total_steps: usize, peak_lr: f64, warm_ratio: f64) -> f64 {
    debug_assert!(step <= total_steps);
    debug_assert!(warm_ratio > 0.0 && warm_ratio < 1.0);
    if total_steps == 0 {
        return 0.0;
    }
    let s = step as f64;
    let total = total_steps as f64;
    let warm = warm_ratio * total;
    if s < warm {
        peak_lr * s / warm
    } else {
        (peak_lr * (total - s) / (total - warm)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamStore, Tensor};

    fn single(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.register("w", Tensor::scalar(value)).unwrap();
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut store = single(0.37);
        let grads = Gradients::zeros_like(&store);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&store, cfg);
        for _ in 0..5 {
            opt.step(&mut store, &grads, 1e-2).unwrap();
        }
        assert_eq!(store.get(crate::numerics::ParamId(0)).item(), 0.37);
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn hand_computed_single_step() {
        // p=1, g=0.5, lr=0.1, wd=0.01:
        // decayed p = 0.999; m=0.05, v=0.00025; m_hat=0.5, v_hat=0.25;
        // update = 0.1 * 0.5 / (0.5 + 1e-8) = 0.099999998; p = 0.899000002.
        let mut store = single(1.0);
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(crate::numerics::ParamId(0))[0] = 0.5;
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        opt.step(&mut store, &grads, 0.1).unwrap();
        let p = store.get(crate::numerics::ParamId(0)).item();
        assert!((p - 0.899_000_002).abs() < 1e-12, "{p}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut store = single(1.0);
        let other = {
            let mut s = ParamStore::<f64>::new();
            s.register("w", Tensor::zeros(vec![3])).unwrap();
            s
        };
        let grads = Gradients::zeros_like(&other);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        assert!(matches!(
            opt.step(&mut store, &grads, 0.1),
            Err(NumericsError::ShapeMismatch { .. })
        ));
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn presets_accepted() {
        let mut store = single(1.0);
        let grads = Gradients::zeros_like(&store);
        let mut opt = AdamW::new(&store, AdamWConfig::default());
        opt.step(&mut store, &grads, ENCODER_PRESET_LR).unwrap();
        opt.step(&mut store, &grads, DECODER_PRESET_LR).unwrap();
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at_step(0, 1000, 1e-3, 0.05), 0.0);
        assert_eq!(lr_at_step(50, 1000, 1e-3, 0.05), 1e-3);
        assert_eq!(lr_at_step(1000, 1000, 1e-3, 0.05), 0.0);
        assert!((lr_at_step(25, 1000, 1e-3, 0.05) - 5e-4).abs() < 1e-15);
        assert!((lr_at_step(525, 1000, 1e-3, 0.05) - 5e-4).abs() < 1e-15);
    }
}
