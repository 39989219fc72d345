//! FFN redundancy diagnostics on post-GELU FC1 activations: activation
//! sparsity, linear reconstruction fidelity (R²) and effective rank ratio.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{forward, ModelConfig, ModelWeights};
use crate::error::{Result, ToastError};
use crate::linalg::{lstsq_f64, singular_values_f64, Matrix};
use crate::par;
use crate::tcs::layer_seed;

/// Variance below which a channel counts as constant.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Fraction of entries with `|a| < eps`.
pub fn activation_sparsity(acts: &Matrix, eps: f64) -> f64 {
    let total = acts.as_slice().len();
    if total == 0 {
        return 0.0;
    }
    let small = acts
        .as_slice()
        .iter()
        .filter(|v| ((**v as f64).abs()) < eps)
        .count();
    small as f64 / total as f64
}

fn column_f64(acts: &Matrix, c: usize) -> Vec<f64> {
    (0..acts.rows()).map(|r| acts.get(r, c) as f64).collect()
}

fn variance(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, ss / n)
}

/// Coefficient of determination of `target` regressed on `predictors` plus an
/// intercept.
pub fn channel_r2(acts: &Matrix, target: usize, predictors: &[usize]) -> Result<f64> {
    let n = acts.rows();
    let c = acts.cols();
    if predictors.is_empty() {
        return Err(ToastError::InvalidArgument("no predictor channels".into()));
    }
    if n <= predictors.len() {
        return Err(ToastError::Underdetermined {
            rows: n,
            cols: predictors.len(),
        });
    }
    if let Some(&bad) = predictors.iter().chain([&target]).find(|&&i| i >= c) {
        return Err(ToastError::IndexOutOfRange {
            tensor: "activation channel".into(),
            index: bad,
            bound: c,
        });
    }
    if predictors.contains(&target) {
        return Err(ToastError::InvalidArgument(format!(
            "target channel {target} is among the predictors"
        )));
    }
    let y = column_f64(acts, target);
    let (mean, var) = variance(&y);
    if var <= MIN_VARIANCE {
        return Err(ToastError::DegenerateTarget(target));
    }
    let k = predictors.len() + 1;
    let mut design = Vec::with_capacity(n * k);
    for r in 0..n {
        design.push(1.0);
        for &p in predictors {
            design.push(acts.get(r, p) as f64);
        }
    }
    let beta = lstsq_f64(&design, n, k, &y)?;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (r, yr) in y.iter().enumerate() {
        let row = &design[r * k..(r + 1) * k];
        let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += (yr - fit) * (yr - fit);
        ss_tot += (yr - mean) * (yr - mean);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// `exp(H(σ̄)) / C` with `σ̄ = σ / Σσ` and natural-log entropy.
pub fn effective_rank_ratio(acts: &Matrix) -> Result<f64> {
    let sigma = singular_values_f64(acts)?;
    let sum: f64 = sigma.iter().sum();
    if sum <= 0.0 {
        return Err(ToastError::ZeroMatrix);
    }
    let entropy: f64 = sigma
        .iter()
        .map(|s| s / sum)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(entropy.exp() / acts.cols() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Near-zero threshold for sparsity.
    pub eps: f64,
    pub seed: u64,
    /// Upper bound on regressed target channels per layer.
    pub max_targets: usize,
    /// Upper bound on predictor channels per regression.
    pub max_predictors: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            seed: 0,
            max_targets: 32,
            max_predictors: 32,
        }
    }
}

/// One target channel and the predictors it is regressed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct R2Probe {
    pub target: usize,
    pub predictors: Vec<usize>,
}

/// Seeded choice of R² probes for one layer. Targets are drawn from the
/// non-constant channels; predictors from all other channels, at most
/// `N − 2` of them so the intercept fit stays overdetermined.
pub fn r2_probes(acts: &Matrix, layer: usize, opts: &AnalyzeOptions) -> Vec<R2Probe> {
    let n = acts.rows();
    let c = acts.cols();
    let eligible: Vec<usize> = (0..c)
        .filter(|&j| variance(&column_f64(acts, j)).1 > MIN_VARIANCE)
        .collect();
    let num_pred = opts
        .max_predictors
        .min(c.saturating_sub(1))
        .min(n.saturating_sub(2));
    if eligible.is_empty() || num_pred == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(opts.seed, layer));
    let mut picks: Vec<usize> = index::sample(&mut rng, eligible.len(), opts.max_targets.min(eligible.len()))
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|target| {
            let mut predictors: Vec<usize> = index::sample(&mut rng, c - 1, num_pred)
                .into_iter()
                .map(|i| if i >= target { i + 1 } else { i })
                .collect();
            predictors.sort_unstable();
            R2Probe { target, predictors }
        })
        .collect()
}

/// Redundancy metrics of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRedundancy {
    pub layer: usize,
    pub sparsity: f64,
    /// Mean R² over the probes; 1.0 when every channel is constant, since an
    /// intercept reproduces a constant channel exactly.
    pub mean_r2: f64,
    pub effective_rank_ratio: f64,
    /// Number of target channels regressed.
    pub sampled_channels: usize,
    /// Predictor channels per regression.
    pub predictors: usize,
}

/// Per-layer redundancy profile; serializes as a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RedundancyReport {
    pub layers: Vec<LayerRedundancy>,
}

/// Metrics for one layer's activation matrix.
pub fn layer_redundancy(acts: &Matrix, layer: usize, opts: &AnalyzeOptions) -> Result<LayerRedundancy> {
    let sparsity = activation_sparsity(acts, opts.eps);
    let effective_rank_ratio = match effective_rank_ratio(acts) {
        Ok(r) => r,
        // a dead layer has no spectrum; report the floor of the range
        Err(ToastError::ZeroMatrix) => 1.0 / acts.cols() as f64,
        Err(e) => return Err(e),
    };
    let probes = r2_probes(acts, layer, opts);
    let mean_r2 = if probes.is_empty() {
        1.0
    } else {
        let mut sum = 0.0;
        for p in &probes {
            sum += channel_r2(acts, p.target, &p.predictors)?;
        }
        sum / probes.len() as f64
    };
    Ok(LayerRedundancy {
        layer,
        sparsity,
        mean_r2,
        effective_rank_ratio,
        sampled_channels: probes.len(),
        predictors: probes.first().map_or(0, |p| p.predictors.len()),
    })
}

/// Runs every calibration batch through the model and profiles each layer's
/// FC1 activations, batches stacked along the token axis.
pub fn redundancy_report(
    config: &ModelConfig,
    weights: &ModelWeights,
    calibration: &[Matrix],
    opts: &AnalyzeOptions,
) -> Result<RedundancyReport> {
    if calibration.is_empty() {
        return Err(ToastError::InvalidArgument("no calibration batches".into()));
    }
    let mut per_layer: Vec<Vec<Matrix>> = vec![Vec::new(); config.num_layers];
    for batch in calibration {
        let (_, trace) = forward(config, weights, batch, None)?;
        for (l, lt) in trace.layers.into_iter().enumerate() {
            per_layer[l].push(lt.fc1_act);
        }
    }
    let stacked: Vec<Matrix> = per_layer
        .iter()
        .map(|parts| Matrix::vstack(&parts.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let layers = par::try_map_range(stacked.len(), |l| layer_redundancy(&stacked[l], l, opts))?;
    Ok(RedundancyReport { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_examples() {
        assert_eq!(activation_sparsity(&Matrix::zeros(3, 4), 1e-3), 1.0);
        let ones = Matrix::from_fn(3, 4, |_, _| 1.0);
        assert_eq!(activation_sparsity(&ones, 1e-6), 0.0);
        let half = Matrix::from_fn(4, 4, |i, _| if i % 2 == 0 { 0.0 } else { 1.0 });
        assert_eq!(activation_sparsity(&half, 1e-3), 0.5);
    }

    #[test]
    fn copy_channel_r2_is_one() {
        let acts = Matrix::from_fn(20, 3, |i, j| match j {
            0 => (i as f32 * 0.37).sin(),
            1 => (i as f32 * 1.3).cos(),
            _ => (i as f32 * 0.37).sin(),
        });
        let r2 = channel_r2(&acts, 2, &[0, 1]).unwrap();
        assert!((r2 - 1.0).abs() < 1e-6, "{r2}");
    }

    #[test]
    fn degenerate_target() {
        let acts = Matrix::from_fn(10, 2, |i, j| if j == 0 { 3.0 } else { i as f32 });
        let err = channel_r2(&acts, 0, &[1]).unwrap_err();
        assert!(err.to_string().starts_with("degenerate target"));
    }

    #[test]
    fn uniform_and_rank_one_spectra() {
        let eye = Matrix::identity(5).scale(3.0);
        assert!((effective_rank_ratio(&eye).unwrap() - 1.0).abs() < 1e-6);
        // exact rank one: powers of two keep every product representable
        let u = [1.0f32, 2.0, -4.0, 0.5, 8.0, 1.0];
        let v = [2.0f32, -1.0, 0.25, 4.0];
        let r1 = Matrix::from_fn(6, 4, |i, j| u[i] * v[j]);
        assert!((effective_rank_ratio(&r1).unwrap() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn zero_matrix_error() {
        assert_eq!(
            effective_rank_ratio(&Matrix::zeros(3, 3)).unwrap_err().to_string(),
            "zero matrix"
        );
    }

    #[test]
    fn probes_exclude_target_and_constants() {
        let acts = Matrix::from_fn(50, 40, |i, j| if j % 5 == 0 { 1.0 } else { ((i * j) as f32).sin() });
        let probes = r2_probes(&acts, 3, &AnalyzeOptions::default());
        assert_eq!(probes.len(), 32);
        for p in &probes {
            assert!(p.target % 5 != 0);
            assert_eq!(p.predictors.len(), 32);
            assert!(!p.predictors.contains(&p.target));
            assert!(p.predictors.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
