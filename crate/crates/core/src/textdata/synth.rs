//! Synthetic behavior sequences with a planted category-recency signal.
//!
//! Each behavior is `cat<c> item<i>` where item ids are disjoint per category.
//! A sample is "hit" when some behavior among the last `recency_window`
//! positions shares the target's category; the label is drawn from
//! Bernoulli(`p_hit`) for hits and Bernoulli(`p_miss`) otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BehaviorRecord, DataError, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_users: usize,
    pub history_len: usize,
    pub n_categories: usize,
    pub items_per_category: usize,
    pub recency_window: usize,
    pub p_hit: f64,
    pub p_miss: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_users: 1000,
            history_len: 50,
            n_categories: 20,
            items_per_category: 10,
            recency_window: 10,
            p_hit: 0.9,
            p_miss: 0.1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidParams(m));
        if self.history_len == 0 {
            return bad("history_len must be positive".into());
        }
        if self.n_categories == 0 || self.items_per_category == 0 {
            return bad("n_categories and items_per_category must be positive".into());
        }
        if self.recency_window == 0 || self.recency_window > self.history_len {
            return bad(format!(
                "recency_window must lie in [1, history_len = {}], got {}",
                self.history_len, self.recency_window
            ));
        }
        if !(0.0 <= self.p_miss && self.p_miss < self.p_hit && self.p_hit <= 1.0) {
            return bad(format!(
                "need 0 <= p_miss < p_hit <= 1, got p_miss = {}, p_hit = {}",
                self.p_miss, self.p_hit
            ));
        }
        Ok(())
    }
}

pub fn behavior_text(category: usize, item: usize) -> String {
    format!("cat{category} item{item}")
}

/// Generates `params.n_users` samples; identical `(params, seed)` give identical output.
pub fn synth_dataset(params: &SynthParams, seed: u64) -> Result<Vec<Sample>, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.history_len;
    let ipc = params.items_per_category;
    let draw = |rng: &mut ChaCha8Rng| {
        let c = rng.random_range(0..params.n_categories);
        let j = rng.random_range(0..ipc);
        (c, c * ipc + j)
    };
    let mut out = Vec::with_capacity(params.n_users);
    for u in 0..params.n_users {
        let history: Vec<(usize, usize)> = (0..n).map(|_| draw(&mut rng)).collect();
        let (tc, ti) = draw(&mut rng);
        let hit = history[n - params.recency_window..].iter().any(|&(c, _)| c == tc);
        let p = if hit { params.p_hit } else { params.p_miss };
        let label = u8::from(rng.random::<f64>() < p);
        out.push(Sample {
            user_id: format!("u{u}"),
            behaviors: history
                .iter()
                .enumerate()
                .map(|(t, &(c, i))| BehaviorRecord {
                    text: behavior_text(c, i),
                    time_index: t as u32 + 1,
                })
                .collect(),
            target_text: behavior_text(tc, ti),
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn category(text: &str) -> &str {
        text.split_whitespace().next().unwrap()
    }

    fn hit(s: &Sample, w: usize) -> bool {
        let n = s.behaviors.len();
        s.behaviors[n - w..]
            .iter()
            .any(|b| category(&b.text) == category(&s.target_text))
    }

    #[test]
    fn noise_free_labels_follow_rule() {
        let p = SynthParams {
            n_users: 500,
            p_hit: 1.0,
            p_miss: 0.0,
            ..Default::default()
        };
        for s in synth_dataset(&p, 4).unwrap() {
            assert_eq!(s.label == 1, hit(&s, p.recency_window));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SynthParams {
            n_users: 50,
            ..Default::default()
        };
        let a = serde_json::to_string(&synth_dataset(&p, 9).unwrap()).unwrap();
        let b = serde_json::to_string(&synth_dataset(&p, 9).unwrap()).unwrap();
        let c = serde_json::to_string(&synth_dataset(&p, 10).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            SynthParams {
                p_hit: 0.1,
                p_miss: 0.2,
                ..Default::default()
            },
            SynthParams {
                recency_window: 60,
                ..Default::default()
            },
            SynthParams {
                p_hit: 1.5,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(matches!(synth_dataset(&p, 0), Err(DataError::InvalidParams(_))));
        }
    }

    #[test]
    fn label_frequency_matches_mixture() {
        let p = SynthParams {
            n_users: 10_000,
            ..Default::default()
        };
        let data = synth_dataset(&p, 21).unwrap();
        // window-hit probability for a uniform category draw
        let q = 1.0 - (1.0 - 1.0 / p.n_categories as f64).powi(p.recency_window as i32);
        let expected = q * p.p_hit + (1.0 - q) * p.p_miss;
        let observed = data.iter().filter(|s| s.label == 1).count() as f64 / data.len() as f64;
        let se = (expected * (1.0 - expected) / data.len() as f64).sqrt();
        assert!((observed - expected).abs() < 3.0 * se, "{observed} vs {expected}");
        let hits = data.iter().filter(|s| hit(s, p.recency_window)).count() as f64 / data.len() as f64;
        let se_q = (q * (1.0 - q) / data.len() as f64).sqrt();
        assert!((hits - q).abs() < 3.0 * se_q, "{hits} vs {q}");
    }
}
