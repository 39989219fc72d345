//! Coupled head-dimension pruning for attention.
//!
//! Each head has two coupled groups. Dimension `j` of the QK group is the
//! pair (column `j` of `W_Q`, column `j` of `W_K`); dimension `j` of the VO
//! group is (column `j` of `W_V`, row `j` of `W_proj`). A dimension is removed
//! from both members of its group at once, so `Q·Kᵀ` and `A·V·W_proj` stay
//! well-formed. Importance is the distance of a dimension's concatenated
//! weight vector from the group's geometric median; the dimensions nearest
//! the median are the most replaceable and go first.

use serde::{Deserialize, Serialize};

use crate::engine::{HeadWeights, ModelConfig, ModelWeights};
use crate::error::{Result, ToastError};
use crate::linalg::{geometric_median, Matrix, Vector, GM_MAX_ITER, GM_TOL};
use crate::par;
use crate::select::top_k_indices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    QK,
    VO,
}

/// `d_k × 2D` matrix whose row `j` concatenates the two weight vectors that
/// must be pruned together.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledGroup {
    pub kind: GroupKind,
    pub head: usize,
    pub matrix: Matrix,
}

impl CoupledGroup {
    pub fn new(kind: GroupKind, head: usize, weights: &HeadWeights) -> Self {
        let d = weights.wq.rows();
        let k = weights.width();
        let matrix = match kind {
            GroupKind::QK => Matrix::from_fn(k, 2 * d, |j, c| {
                if c < d {
                    weights.wq.get(c, j)
                } else {
                    weights.wk.get(c - d, j)
                }
            }),
            GroupKind::VO => Matrix::from_fn(k, 2 * d, |j, c| {
                if c < d {
                    weights.wv.get(c, j)
                } else {
                    weights.wproj.get(j, c - d)
                }
            }),
        };
        Self { kind, head, matrix }
    }
}

/// `score[j] = ‖w_j − GM(rows)‖₂`.
pub fn coupled_importance(group: &CoupledGroup) -> Result<Vector> {
    if group.matrix.rows() == 0 {
        return Err(ToastError::NoPoints);
    }
    if !group.matrix.is_finite() {
        return Err(ToastError::NonFinite(format!(
            "{:?} group of head {}",
            group.kind, group.head
        )));
    }
    let gm = geometric_median(&group.matrix, GM_TOL, GM_MAX_ITER)?;
    let center: Vec<f64> = gm.as_slice().iter().map(|&v| v as f64).collect();
    let scores = (0..group.matrix.rows())
        .map(|j| {
            let mut s = 0.0f64;
            for (w, c) in group.matrix.row(j).iter().zip(&center) {
                let diff = *w as f64 - c;
                s += diff * diff;
            }
            s.sqrt() as f32
        })
        .collect();
    Ok(Vector::from_raw(scores))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadPlan {
    pub qk_keep: Vec<usize>,
    pub vo_keep: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub dk_prime: usize,
    pub heads: Vec<HeadPlan>,
}

/// Kept dimensions per layer, head and group. Every head of a layer keeps
/// the same number of dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub layers: Vec<LayerPlan>,
}

/// `max(1, round((1 − ratio) · d_k))`.
pub fn pruned_dim(ratio: f64, head_dim: usize) -> usize {
    (((1.0 - ratio) * head_dim as f64).round() as usize).clamp(1, head_dim)
}

impl PruningPlan {
    /// Plan that keeps every dimension of an unpruned model.
    pub fn identity(config: &ModelConfig) -> Self {
        let all: Vec<usize> = (0..config.head_dim).collect();
        Self {
            layers: (0..config.num_layers)
                .map(|_| LayerPlan {
                    dk_prime: config.head_dim,
                    heads: vec![
                        HeadPlan {
                            qk_keep: all.clone(),
                            vo_keep: all.clone(),
                        };
                        config.num_heads
                    ],
                })
                .collect(),
        }
    }

    /// Checks the plan against the (current) widths of `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(ToastError::shape(
                None,
                "plan",
                format!("{} layers for a {}-layer model", self.layers.len(), config.num_layers),
            ));
        }
        for (l, lp) in self.layers.iter().enumerate() {
            let width = config.live_head_dim(l);
            if lp.heads.len() != config.num_heads {
                return Err(ToastError::shape(
                    Some(l),
                    "plan heads",
                    format!("{} heads for {}", lp.heads.len(), config.num_heads),
                ));
            }
            if lp.dk_prime == 0 || lp.dk_prime > width {
                return Err(ToastError::shape(
                    Some(l),
                    "plan dk_prime",
                    format!("{} outside 1..={width}", lp.dk_prime),
                ));
            }
            for (h, hp) in lp.heads.iter().enumerate() {
                for (what, idx) in [("qk_keep", &hp.qk_keep), ("vo_keep", &hp.vo_keep)] {
                    let name = format!("layer{l}.h{h}.{what}");
                    if idx.len() != lp.dk_prime {
                        return Err(ToastError::shape(
                            Some(l),
                            name,
                            format!("{} indices for dk_prime {}", idx.len(), lp.dk_prime),
                        ));
                    }
                    if let Some(&i) = idx.iter().find(|&&i| i >= width) {
                        return Err(ToastError::IndexOutOfRange {
                            tensor: name,
                            index: i,
                            bound: width,
                        });
                    }
                    if idx.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(ToastError::InvalidArgument(format!(
                            "{name} must be strictly increasing"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Config whose live head widths follow the plan.
    pub fn apply_to_config(&self, config: &ModelConfig) -> ModelConfig {
        ModelConfig {
            per_layer_head_dim: self.layers.iter().map(|l| l.dk_prime).collect(),
            ..config.clone()
        }
    }

    pub fn dk_primes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dk_prime).collect()
    }
}

/// Scores every coupled group of an unpruned model and keeps, per head and
/// group, the `max(1, round((1 − ratio)·d_k))` highest-importance dimensions
/// (ties toward the lower index). With `skip_first`, layer 0 is left intact.
pub fn build_plan(
    config: &ModelConfig,
    weights: &ModelWeights,
    ratio: f64,
    skip_first: bool,
) -> Result<PruningPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(ToastError::InvalidArgument(format!(
            "ratio must be in [0, 1), got {ratio}"
        )));
    }
    if !config.is_unpruned() {
        return Err(ToastError::InvalidArgument(
            "build_plan expects an unpruned model".into(),
        ));
    }
    weights.validate(config)?;
    let dk = config.head_dim;
    let h = config.num_heads;
    let target = pruned_dim(ratio, dk);

    // (layer, head, kind) flattened in ascending order.
    let jobs = config.num_layers * h * 2;
    let kept = par::try_map_range(jobs, |job| -> Result<Vec<usize>> {
        let layer = job / (2 * h);
        let head = (job / 2) % h;
        let kind = if job % 2 == 0 { GroupKind::QK } else { GroupKind::VO };
        if layer == 0 && skip_first {
            return Ok((0..dk).collect());
        }
        let group = CoupledGroup::new(kind, head, &weights.blocks[layer].heads[head]);
        let scores = coupled_importance(&group)?;
        Ok(top_k_indices(scores.as_slice(), target))
    })?;

    let mut it = kept.into_iter();
    let layers = (0..config.num_layers)
        .map(|l| {
            let heads = (0..h)
                .map(|_| HeadPlan {
                    qk_keep: it.next().expect("qk job"),
                    vo_keep: it.next().expect("vo job"),
                })
                .collect();
            LayerPlan {
                dk_prime: if l == 0 && skip_first { dk } else { target },
                heads,
            }
        })
        .collect();
    Ok(PruningPlan { layers })
}

/// Shrinks every head to the plan's kept dimensions. `D` is unchanged.
/// Returns the compressed config and weights.
pub fn apply_plan(
    config: &ModelConfig,
    weights: &ModelWeights,
    plan: &PruningPlan,
) -> Result<(ModelConfig, ModelWeights)> {
    weights.validate(config)?;
    plan.validate(config)?;
    let d = config.embed_dim;
    let all_d: Vec<usize> = (0..d).collect();
    let blocks = weights
        .blocks
        .iter()
        .zip(&plan.layers)
        .map(|(block, lp)| {
            let mut out = block.clone();
            out.heads = block
                .heads
                .iter()
                .zip(&lp.heads)
                .map(|(hw, hp)| HeadWeights {
                    wq: hw.wq.select_cols(&hp.qk_keep),
                    wk: hw.wk.select_cols(&hp.qk_keep),
                    bq: hw.bq.gather(&hp.qk_keep),
                    bk: hw.bk.gather(&hp.qk_keep),
                    wv: hw.wv.select_cols(&hp.vo_keep),
                    bv: hw.bv.gather(&hp.vo_keep),
                    wproj: hw.wproj.select(&hp.vo_keep, &all_d),
                })
                .collect();
            out
        })
        .collect();
    let cfg = plan.apply_to_config(config);
    let compressed = ModelWeights { blocks };
    compressed.validate(&cfg)?;
    Ok((cfg, compressed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::random_weights;

    #[test]
    fn rounding_rule() {
        assert_eq!(pruned_dim(0.9, 64), 6);
        assert_eq!(pruned_dim(0.8, 64), 13);
        assert_eq!(pruned_dim(0.0, 64), 64);
        assert_eq!(pruned_dim(0.999, 64), 1);
    }

    #[test]
    fn single_row_scores_zero() {
        let g = CoupledGroup {
            kind: GroupKind::QK,
            head: 0,
            matrix: Matrix::new(1, 4, vec![1.0, -2.0, 3.0, 0.5]).unwrap(),
        };
        assert_eq!(coupled_importance(&g).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn identical_rows_score_equal() {
        let m = Matrix::new(
            4,
            3,
            vec![1.0, 2.0, 0.0, 1.0, 2.0, 0.0, -3.0, 0.5, 4.0, 2.0, -1.0, 1.0],
        )
        .unwrap();
        let g = CoupledGroup {
            kind: GroupKind::VO,
            head: 0,
            matrix: m,
        };
        let s = coupled_importance(&g).unwrap();
        assert!((s.get(0) - s.get(1)).abs() < 1e-6);
    }

    #[test]
    fn vo_group_uses_proj_rows() {
        let cfg = ModelConfig::dense(1, 4, 4, 2, 8, false);
        let w = random_weights(&cfg, 1);
        let hw = &w.blocks[0].heads[1];
        let g = CoupledGroup::new(GroupKind::VO, 1, hw);
        assert_eq!(g.matrix.dims(), (2, 8));
        assert_eq!(g.matrix.get(1, 2), hw.wv.get(2, 1));
        assert_eq!(g.matrix.get(1, 4 + 3), hw.wproj.get(1, 3));
        let g = CoupledGroup::new(GroupKind::QK, 1, hw);
        assert_eq!(g.matrix.get(0, 4 + 1), hw.wk.get(1, 0));
    }

    #[test]
    fn skip_first_keeps_layer_zero() {
        let cfg = ModelConfig::dense(3, 6, 16, 2, 32, true);
        let w = random_weights(&cfg, 4);
        let plan = build_plan(&cfg, &w, 0.75, true).unwrap();
        assert_eq!(plan.layers[0].dk_prime, 8);
        assert_eq!(plan.layers[0].heads[1].qk_keep, (0..8).collect::<Vec<_>>());
        assert_eq!(plan.dk_primes(), vec![8, 2, 2]);
        plan.validate(&cfg).unwrap();
    }

    #[test]
    fn identity_plan_is_bit_identical() {
        let cfg = ModelConfig::dense(2, 5, 8, 2, 16, true);
        let w = random_weights(&cfg, 2);
        let (c2, w2) = apply_plan(&cfg, &w, &PruningPlan::identity(&cfg)).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(w2, w);
    }

    #[test]
    fn bad_plans_rejected() {
        let cfg = ModelConfig::dense(1, 5, 8, 2, 16, true);
        let w = random_weights(&cfg, 2);
        let mut plan = PruningPlan::identity(&cfg);
        plan.layers[0].heads[0].vo_keep[3] = 9;
        assert!(matches!(
            apply_plan(&cfg, &w, &plan),
            Err(ToastError::IndexOutOfRange { index: 9, .. })
        ));
        let mut plan = PruningPlan::identity(&cfg);
        plan.layers[0].heads[1].qk_keep.pop();
        assert!(apply_plan(&cfg, &w, &plan).is_err());
    }

    #[test]
    fn plan_json_layout() {
        let cfg = ModelConfig::dense(1, 5, 4, 2, 8, true);
        let v = serde_json::to_value(PruningPlan::identity(&cfg)).unwrap();
        assert_eq!(v["layers"][0]["dk_prime"], 2);
        assert_eq!(v["layers"][0]["heads"][1]["qk_keep"], serde_json::json!([0, 1]));
        assert_eq!(v["layers"][0]["heads"][1]["vo_keep"], serde_json::json!([0, 1]));
    }
}
