use crate::numerics::kernels;
use crate::scalar::Scalar;

use super::TrainError;

/// Binary cross-entropy of one logit in the overflow-free form.
pub fn bce_loss<F: Scalar>(logit: F, label: u8) -> F {
    kernels::bce_with_logits(logit, if label == 1 { F::one() } else { F::zero() })
}

/// Area under the ROC curve from rank statistics; tied scores share their
/// average rank, which credits tied positive/negative pairs with one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::NonFiniteScore);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TrainError::SingleClass { positives: pos, negatives: neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the positive rank sum keeps midranks integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        let group_pos = order[i..j].iter().filter(|&&o| labels[o] == 1).count() as u128;
        rank_sum2 += twice_mid * group_pos;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}
