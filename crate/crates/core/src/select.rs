//! Deterministic top-k selection.

use std::cmp::Ordering;

/// `max(1, round(ratio · dim))`, capped at `dim`.
pub fn keep_count(ratio: f64, dim: usize) -> usize {
    ((ratio * dim as f64).round() as usize).clamp(1, dim.max(1))
}

/// Indices of the `k` largest scores, ties broken toward the lower index,
/// returned in ascending index order.
pub fn top_k_indices(scores: &[f32], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let rank = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
    };
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, rank);
    }
    order.truncate(k);
    order.sort_unstable();
    order
}
