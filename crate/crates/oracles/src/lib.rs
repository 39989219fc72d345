//! Slow, independent reference evaluations for testing `toast-core`.
//!
//! Nothing here calls the core kernels: every routine is a plain f64 loop over
//! the core's data containers, so agreement with the optimized path is
//! evidence rather than tautology.

use toast_core::engine::{ModelConfig, ModelWeights};
use toast_core::Matrix;

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|&v| v as f64).collect())
        .collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Rows) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) as f64 - v).abs());
        }
    }
    worst
}

fn erf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 is too coarse; use the series / continued
    // fraction split for ~1e-15 accuracy.
    let ax = x.abs();
    let r = if ax < 2.5 {
        let mut sum = ax;
        let mut term = ax;
        let x2 = ax * ax;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x2 / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-17 {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // erfc continued fraction (Lentz)
        let x2 = ax * ax;
        let mut f = ax;
        let mut c = ax;
        let mut d = 0.0;
        for k in 1..200 {
            let a = k as f64 / 2.0;
            d = ax + a * d;
            d = if d == 0.0 { 1e-300 } else { 1.0 / d };
            c = ax + a / c;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (-x2).exp() / (f * std::f64::consts::PI.sqrt())
    };
    if x < 0.0 {
        -r
    } else {
        r
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm(x: &Rows, scale: &[f32], shift: &[f32]) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-6).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * scale[j] as f64 + shift[j] as f64)
                .collect()
        })
        .collect()
}

/// Which internal dimensions / channels participate; `true` = kept.
#[derive(Debug, Clone)]
pub struct HeadMask {
    pub qk: Vec<bool>,
    pub vo: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct FfnMask {
    pub input: Vec<bool>,
    pub expanded: Vec<bool>,
}

/// Masks for one block of a dense model, plus the attention width to scale by.
#[derive(Debug, Clone, Default)]
pub struct BlockMask {
    pub heads: Option<Vec<HeadMask>>,
    pub scale_dim: Option<usize>,
    pub ffn: Option<FfnMask>,
}

/// Naive pre-LN ViT forward in f64 over full-size weights. Masked-out
/// dimensions are treated as zero inside the full matrices.
pub fn reference_forward(
    config: &ModelConfig,
    weights: &ModelWeights,
    input: &Matrix,
    masks: &[BlockMask],
) -> Rows {
    let n = config.num_tokens;
    let d = config.embed_dim;
    let mut x = to_rows(input);
    for (l, block) in weights.blocks.iter().enumerate() {
        let mask = masks.get(l).cloned().unwrap_or_default();
        let k_full = block.heads[0].wq.cols();
        let scale_dim = mask.scale_dim.unwrap_or(if config.scale_original {
            config.head_dim
        } else {
            config.per_layer_head_dim[l]
        });
        let scale = 1.0 / (scale_dim as f64).sqrt();
        let ln1 = layer_norm(&x, block.ln1_scale.as_slice(), block.ln1_shift.as_slice());
        let mut attn = vec![vec![0.0f64; d]; n];
        for (h, hw) in block.heads.iter().enumerate() {
            let hm = mask.heads.as_ref().map(|m| &m[h]);
            let qk_on = |j: usize| hm.map_or(true, |m| m.qk[j]);
            let vo_on = |j: usize| hm.map_or(true, |m| m.vo[j]);
            let proj = |w: &Matrix, b: &[f32], i: usize, j: usize| -> f64 {
                let mut s = b[j] as f64;
                for c in 0..d {
                    s += ln1[i][c] * w.get(c, j) as f64;
                }
                s
            };
            let mut scores = vec![vec![0.0f64; n]; n];
            for i in 0..n {
                for t in 0..n {
                    let mut s = 0.0;
                    for j in 0..k_full {
                        if qk_on(j) {
                            s += proj(&hw.wq, hw.bq.as_slice(), i, j)
                                * proj(&hw.wk, hw.bk.as_slice(), t, j);
                        }
                    }
                    scores[i][t] = s * scale;
                }
            }
            for row in scores.iter_mut() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for v in row.iter_mut() {
                    *v = (*v - m).exp() / z;
                }
            }
            let v: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    (0..k_full)
                        .map(|j| if vo_on(j) { proj(&hw.wv, hw.bv.as_slice(), t, j) } else { 0.0 })
                        .collect()
                })
                .collect();
            for i in 0..n {
                for j in 0..k_full {
                    if !vo_on(j) {
                        continue;
                    }
                    let ctx: f64 = (0..n).map(|t| scores[i][t] * v[t][j]).sum();
                    for c in 0..d {
                        attn[i][c] += ctx * hw.wproj.get(j, c) as f64;
                    }
                }
            }
        }
        for i in 0..n {
            for c in 0..d {
                x[i][c] += attn[i][c] + block.bproj.get(c) as f64;
            }
        }
        let ln2 = layer_norm(&x, block.ln2_scale.as_slice(), block.ln2_shift.as_slice());
        let ffn = reference_ffn(
            &ln2,
            &block.fc1,
            block.bfc1.as_slice(),
            &block.fc2,
            block.bfc2.as_slice(),
            mask.ffn.as_ref(),
        );
        for i in 0..n {
            for c in 0..d {
                x[i][c] += ffn[i][c];
            }
        }
    }
    x
}

/// `GELU(x·W1 + b1)·W2 + b2` with dropped input channels and dropped
/// expanded channels zeroed inside the full matrices.
pub fn reference_ffn(
    x: &Rows,
    fc1: &Matrix,
    b1: &[f32],
    fc2: &Matrix,
    b2: &[f32],
    mask: Option<&FfnMask>,
) -> Rows {
    let d = fc1.rows();
    let dm = fc1.cols();
    x.iter()
        .map(|row| {
            let hidden: Vec<f64> = (0..dm)
                .map(|e| {
                    if mask.is_some_and(|m| !m.expanded[e]) {
                        return 0.0;
                    }
                    let mut s = b1[e] as f64;
                    for c in 0..d {
                        if mask.map_or(true, |m| m.input[c]) {
                            s += row[c] * fc1.get(c, e) as f64;
                        }
                    }
                    gelu(s)
                })
                .collect();
            (0..fc2.cols())
                .map(|c| {
                    let mut s = b2[c] as f64;
                    for (e, h) in hidden.iter().enumerate() {
                        s += h * fc2.get(e, c) as f64;
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn mask_from_indices(len: usize, keep: &[usize]) -> Vec<bool> {
    let mut m = vec![false; len];
    for &i in keep {
        m[i] = true;
    }
    m
}

/// Σ‖pᵢ − y‖₂.
pub fn median_objective(points: &Rows, y: &[f64]) -> f64 {
    points
        .iter()
        .map(|p| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum()
}

/// Geometric median by cyclic coordinate grid search: each pass scans a
/// 41-point grid along every coordinate around the incumbent, halving the
/// grid spacing whenever a full pass makes no progress.
pub fn grid_search_median(points: &Rows) -> Vec<f64> {
    let k = points[0].len();
    let lo = (0..k)
        .map(|j| points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min))
        .collect::<Vec<_>>();
    let hi = (0..k)
        .map(|j| points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect::<Vec<_>>();
    let mut y: Vec<f64> = (0..k).map(|j| 0.5 * (lo[j] + hi[j])).collect();
    let mut step = (0..k).map(|j| hi[j] - lo[j]).fold(0.0f64, f64::max) / 20.0;
    let mut best = median_objective(points, &y);
    while step > 1e-9 {
        let mut improved = false;
        for j in 0..k {
            let center = y[j];
            let mut best_v = center;
            for g in -20i32..=20 {
                y[j] = center + g as f64 * step;
                let f = median_objective(points, &y);
                if f < best - 1e-15 {
                    best = f;
                    best_v = y[j];
                    improved = true;
                }
            }
            y[j] = best_v;
        }
        if !improved {
            step *= 0.5;
        }
    }
    y
}

/// Direct evaluation of the unified channel importance, one channel at a time.
pub fn scalar_importance(
    acts: &Matrix,
    a_cls: Option<&[f32]>,
    sample: &[usize],
    lambda_cls: f64,
    lambda_patch: f64,
) -> Vec<f64> {
    (0..acts.cols())
        .map(|c| {
            let mut patch = 0.0;
            for &i in sample {
                let w = match a_cls {
                    Some(a) => a[i] as f64,
                    None => 1.0,
                };
                patch += w * (acts.get(i, c) as f64).abs();
            }
            let cls = match a_cls {
                Some(_) => lambda_cls * (acts.get(0, c) as f64).abs(),
                None => 0.0,
            };
            cls + lambda_patch * patch / sample.len() as f64
        })
        .collect()
}

/// Least squares through the normal equations `AᵀA β = Aᵀy` (Cholesky).
pub fn normal_equations(a: &Rows, y: &[f64]) -> Vec<f64> {
    let k = a[0].len();
    let mut g = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for (row, yi) in a.iter().zip(y) {
        for i in 0..k {
            rhs[i] += row[i] * yi;
            for j in 0..k {
                g[i][j] += row[i] * row[j];
            }
        }
    }
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = g[i][j];
            for t in 0..j {
                s -= l[i][t] * l[j][t];
            }
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    let mut z = vec![0.0; k];
    for i in 0..k {
        let mut s = rhs[i];
        for t in 0..i {
            s -= l[i][t] * z[t];
        }
        z[i] = s / l[i][i];
    }
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = z[i];
        for t in (i + 1)..k {
            s -= l[t][i] * beta[t];
        }
        beta[i] = s / l[i][i];
    }
    beta
}

/// `exp(H(p)) / C` for a spectrum given explicitly.
pub fn entropy_rank_ratio(sigma: &[f64], channels: usize) -> f64 {
    let sum: f64 = sigma.iter().sum();
    let h: f64 = sigma
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|s| {
            let p = s / sum;
            -p * p.ln()
        })
        .sum();
    h.exp() / channels as f64
}


/// Masks equivalent to applying `plan` to a dense model: dropped QK dims and
/// dropped VO dims are zeroed, attention scaled by the plan's width.
pub fn plan_masks(
    config: &ModelConfig,
    plan: &toast_core::prune::PruningPlan,
) -> Vec<BlockMask> {
    plan.layers
        .iter()
        .map(|lp| BlockMask {
            heads: Some(
                lp.heads
                    .iter()
                    .map(|hp| HeadMask {
                        qk: mask_from_indices(config.head_dim, &hp.qk_keep),
                        vo: mask_from_indices(config.head_dim, &hp.vo_keep),
                    })
                    .collect(),
            ),
            scale_dim: Some(if config.scale_original {
                config.head_dim
            } else {
                lp.dk_prime
            }),
            ffn: None,
        })
        .collect()
}

/// Zeroes every head dimension `>= live` in both coupled groups (weights and
/// biases), so only the first `live` dimensions of each head carry signal.
pub fn zero_pad_heads(weights: &mut ModelWeights, live: usize) {
    for block in &mut weights.blocks {
        let d = block.bproj.len();
        for hw in &mut block.heads {
            let k = hw.wq.cols();
            let keep = |j: usize| j < live;
            hw.wq = Matrix::from_fn(d, k, |i, j| if keep(j) { hw.wq.get(i, j) } else { 0.0 });
            hw.wk = Matrix::from_fn(d, k, |i, j| if keep(j) { hw.wk.get(i, j) } else { 0.0 });
            hw.wv = Matrix::from_fn(d, k, |i, j| if keep(j) { hw.wv.get(i, j) } else { 0.0 });
            hw.wproj = Matrix::from_fn(k, d, |j, c| if keep(j) { hw.wproj.get(j, c) } else { 0.0 });
            let zero_tail = |v: &toast_core::Vector| {
                toast_core::Vector::new(
                    v.as_slice()
                        .iter()
                        .enumerate()
                        .map(|(j, &x)| if keep(j) { x } else { 0.0 })
                        .collect(),
                )
                .unwrap()
            };
            hw.bq = zero_tail(&hw.bq);
            hw.bk = zero_tail(&hw.bk);
            hw.bv = zero_tail(&hw.bv);
        }
    }
}

/// Plan keeping `qk` and `vo` index sets in every head of every layer.
pub fn uniform_plan(
    config: &ModelConfig,
    qk: &[usize],
    vo: &[usize],
) -> toast_core::prune::PruningPlan {
    use toast_core::prune::{HeadPlan, LayerPlan, PruningPlan};
    PruningPlan {
        layers: (0..config.num_layers)
            .map(|_| LayerPlan {
                dk_prime: qk.len(),
                heads: vec![
                    HeadPlan {
                        qk_keep: qk.to_vec(),
                        vo_keep: vo.to_vec(),
                    };
                    config.num_heads
                ],
            })
            .collect(),
    }
}
