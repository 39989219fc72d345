//! Token Channel Selection: training-free, attention-guided channel retention
//! inside each FFN.
//!
//! Two pruning sites per FFN:
//! - the `D` input channels of FC1, removed from the FC1 contraction;
//! - the `D_mlp` expanded channels, removed as FC1 columns together with the
//!   matching FC2 rows.
//!
//! Importance for both sites comes from a seeded sample of patch tokens plus
//! the CLS token when the model has one.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{ModelConfig, ModelWeights};
use crate::error::{Result, ToastError};
use crate::linalg::{gelu, Matrix, Vector};
use crate::select::{keep_count, top_k_indices};

/// Smallest token sample ever drawn.
pub const MIN_SAMPLE: usize = 8;
pub const DEFAULT_LAMBDA_CLS: f64 = 2.0;
pub const DEFAULT_LAMBDA_PATCH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcsMode {
    #[default]
    Dynamic,
    Static,
}

/// Keep ratios and sampling settings for one layer's FFN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPolicy {
    /// Fraction of the `D` FC1 input channels kept.
    pub fc1_keep: f64,
    /// Fraction of the `D_mlp` expanded channels kept.
    pub fc2_keep: f64,
    pub sample_rate: f64,
    pub lambda_cls: f64,
    pub lambda_patch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcsPolicy {
    pub layers: Vec<LayerPolicy>,
    #[serde(default)]
    pub mode: TcsMode,
    #[serde(default)]
    pub seed: u64,
}

/// Kept channel sets of one FFN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSelection {
    pub layer: usize,
    pub fc1_in_keep: Vec<usize>,
    pub expanded_keep: Vec<usize>,
}

impl LayerPolicy {
    pub fn uniform(fc1_keep: f64, fc2_keep: f64, sample_rate: f64) -> Self {
        Self {
            fc1_keep,
            fc2_keep,
            sample_rate,
            lambda_cls: DEFAULT_LAMBDA_CLS,
            lambda_patch: DEFAULT_LAMBDA_PATCH,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.fc1_keep >= 1.0 && self.fc2_keep >= 1.0
    }

    fn validate(&self, layer: usize) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(ToastError::InvalidArgument(format!(
                "layer {layer}: {what} {v} out of range"
            )))
        };
        if !(self.fc1_keep > 0.0 && self.fc1_keep <= 1.0) {
            return bad("fc1_keep", self.fc1_keep);
        }
        if !(self.fc2_keep > 0.0 && self.fc2_keep <= 1.0) {
            return bad("fc2_keep", self.fc2_keep);
        }
        let r = self.sample_rate;
        if !((0.02..=0.2).contains(&r) || r == 1.0) {
            return bad("sample_rate", r);
        }
        if !(self.lambda_cls >= 0.0) || !self.lambda_cls.is_finite() {
            return bad("lambda_cls", self.lambda_cls);
        }
        if !(self.lambda_patch >= 0.0) || !self.lambda_patch.is_finite() {
            return bad("lambda_patch", self.lambda_patch);
        }
        Ok(())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

impl TcsPolicy {
    /// Depth-dependent defaults: FC1 kept 1.0 → 0.7 linearly over depth;
    /// expanded channels kept in full for the first half of the network, then
    /// 0.5 → 0.1; sampling rate 0.02 → 0.2.
    pub fn layer_adaptive(config: &ModelConfig, seed: u64) -> Self {
        let l = config.num_layers;
        let frac = |i: usize, n: usize| if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let half = l / 2;
        let layers = (0..l)
            .map(|i| {
                let fc2_keep = if i < half {
                    1.0
                } else {
                    lerp(0.5, 0.1, frac(i - half, l - half))
                };
                LayerPolicy {
                    fc1_keep: lerp(1.0, 0.7, frac(i, l)),
                    fc2_keep,
                    sample_rate: lerp(0.02, 0.2, frac(i, l)),
                    lambda_cls: if config.has_cls { DEFAULT_LAMBDA_CLS } else { 0.0 },
                    lambda_patch: DEFAULT_LAMBDA_PATCH,
                }
            })
            .collect();
        Self {
            layers,
            mode: TcsMode::Dynamic,
            seed,
        }
    }

    /// The same settings at every layer.
    pub fn uniform(config: &ModelConfig, layer: LayerPolicy, seed: u64) -> Self {
        let mut layer = layer;
        if !config.has_cls {
            layer.lambda_cls = 0.0;
        }
        Self {
            layers: vec![layer; config.num_layers],
            mode: TcsMode::Dynamic,
            seed,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.num_layers {
            return Err(ToastError::InvalidArgument(format!(
                "policy has {} layers, model has {}",
                self.layers.len(),
                config.num_layers
            )));
        }
        for (l, p) in self.layers.iter().enumerate() {
            p.validate(l)?;
        }
        Ok(())
    }

    /// Copy with `lambda_cls` zeroed when the model has no CLS token.
    pub fn resolved_for(&self, config: &ModelConfig) -> Self {
        let mut out = self.clone();
        if !config.has_cls {
            for p in &mut out.layers {
                p.lambda_cls = 0.0;
            }
        }
        out
    }

    /// Per-layer `(kept FC1 inputs, kept expanded channels)`.
    pub fn kept_counts(&self, config: &ModelConfig) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|p| {
                (
                    keep_count(p.fc1_keep, config.embed_dim),
                    keep_count(p.fc2_keep, config.mlp_dim),
                )
            })
            .collect()
    }
}

/// Seed for one layer's token sample, derived from the run seed.
pub fn layer_seed(seed: u64, layer: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded sample of patch token indices, sorted ascending. The CLS token is
/// never part of the sample.
pub fn sample_tokens(num_tokens: usize, rate: f64, seed: u64, has_cls: bool) -> Vec<usize> {
    let offset = usize::from(has_cls);
    let patches = num_tokens.saturating_sub(offset);
    let wanted = ((rate * num_tokens as f64).round() as usize).max(MIN_SAMPLE);
    let size = wanted.min(patches);
    if size == patches {
        return (offset..num_tokens).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s: Vec<usize> = index::sample(&mut rng, patches, size)
        .into_iter()
        .map(|i| i + offset)
        .collect();
    s.sort_unstable();
    s
}

/// Per-channel importance:
/// `λ_cls·|x_cls,c| + λ_patch/|S| · Σ_{i∈S} A_cls,i·|x_i,c|`.
///
/// Row 0 of `acts` is the CLS token when `a_cls` is given. Without `a_cls` the
/// CLS term is dropped and every sampled token gets weight 1.
pub fn unified_importance(
    acts: &Matrix,
    a_cls: Option<&Vector>,
    sample: &[usize],
    lambda_cls: f64,
    lambda_patch: f64,
) -> Result<Vector> {
    if sample.is_empty() {
        return Err(ToastError::EmptySample);
    }
    if let Some(&i) = sample.iter().find(|&&i| i >= acts.rows()) {
        return Err(ToastError::IndexOutOfRange {
            tensor: "token sample".into(),
            index: i,
            bound: acts.rows(),
        });
    }
    if lambda_cls > 0.0 && a_cls.is_none() {
        return Err(ToastError::InvalidArgument(
            "lambda_cls > 0 needs CLS attention weights".into(),
        ));
    }
    if let Some(a) = a_cls {
        if a.len() != acts.rows() {
            return Err(ToastError::shape(
                None,
                "a_cls",
                format!("length {} for {} tokens", a.len(), acts.rows()),
            ));
        }
    }
    let c = acts.cols();
    let mut patch = vec![0.0f64; c];
    for &i in sample {
        let w = a_cls.map_or(1.0, |a| a.get(i) as f64);
        for (acc, &x) in patch.iter_mut().zip(acts.row(i)) {
            *acc += w * (x as f64).abs();
        }
    }
    let inv = lambda_patch / sample.len() as f64;
    let cls_row = a_cls.map(|_| acts.row(0));
    let scores = (0..c)
        .map(|j| {
            let cls = cls_row.map_or(0.0, |r| lambda_cls * (r[j] as f64).abs());
            (cls + inv * patch[j]) as f32
        })
        .collect();
    Ok(Vector::from_raw(scores))
}

/// Keeps the `max(1, round(keep_ratio · C))` highest scores.
pub fn select_channels(scores: &Vector, keep_ratio: f64) -> Vec<usize> {
    top_k_indices(scores.as_slice(), keep_count(keep_ratio, scores.len()))
}

/// Borrowed FFN parameters of one block.
#[derive(Debug, Clone, Copy)]
pub struct FfnWeights<'a> {
    pub fc1: &'a Matrix,
    pub bfc1: &'a Vector,
    pub fc2: &'a Matrix,
    pub bfc2: &'a Vector,
}

/// Result of one FFN evaluation.
#[derive(Debug, Clone)]
pub struct FfnOutput {
    pub output: Matrix,
    /// Post-GELU FC1 activations, `N × D_mlp`; dropped channels are zero.
    pub hidden: Matrix,
    pub selection: Option<ChannelSelection>,
    /// Multiply-accumulates of the reduced dense FC1/FC2 products.
    pub macs: u64,
    /// Multiply-accumulates spent scoring expanded channels on sampled tokens.
    pub selection_macs: u64,
}

impl FfnWeights<'_> {
    fn check(&self, input: &Matrix, layer: usize) -> Result<()> {
        let d = input.cols();
        let dm = self.fc1.cols();
        if self.fc1.rows() != d {
            return Err(ToastError::shape(
                Some(layer),
                "fc1",
                format!("{} rows for input width {d}", self.fc1.rows()),
            ));
        }
        if self.fc2.dims() != (dm, d) || self.bfc1.len() != dm || self.bfc2.len() != d {
            return Err(ToastError::shape(
                Some(layer),
                "fc2",
                format!(
                    "fc2 {}x{}, bfc1 {}, bfc2 {} for {d}->{dm}->{d}",
                    self.fc2.rows(),
                    self.fc2.cols(),
                    self.bfc1.len(),
                    self.bfc2.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Dense `GELU(x·W1 + b1)·W2 + b2`.
pub fn ffn_forward_dense(ffn: FfnWeights<'_>, input: &Matrix) -> Result<FfnOutput> {
    ffn.check(input, 0)?;
    let mut pre = input.matmul(ffn.fc1);
    pre.add_row_vector(ffn.bfc1);
    let hidden = pre.map(gelu);
    let mut output = hidden.matmul(ffn.fc2);
    output.add_row_vector(ffn.bfc2);
    let n = input.rows() as u64;
    let macs = n * ffn.fc1.rows() as u64 * ffn.fc1.cols() as u64
        + n * ffn.fc2.rows() as u64 * ffn.fc2.cols() as u64;
    Ok(FfnOutput {
        output,
        hidden,
        selection: None,
        macs,
        selection_macs: 0,
    })
}

/// Settings for one TCS-reduced FFN call.
#[derive(Debug, Clone, Copy)]
pub struct TcsCall<'a> {
    pub layer: usize,
    pub policy: &'a LayerPolicy,
    pub seed: u64,
    pub has_cls: bool,
    /// A selection frozen by static calibration; skips scoring when present.
    pub fixed: Option<&'a ChannelSelection>,
}

/// FFN with token channel selection. The output keeps the full `D` width.
pub fn ffn_forward_tcs(
    ffn: FfnWeights<'_>,
    input: &Matrix,
    a_cls: Option<&Vector>,
    call: TcsCall<'_>,
) -> Result<FfnOutput> {
    ffn.check(input, call.layer)?;
    let n = input.rows();
    let d = input.cols();
    let dm = ffn.fc1.cols();
    let policy = call.policy;
    let a_cls = if call.has_cls { a_cls } else { None };
    let lambda_cls = if a_cls.is_some() { policy.lambda_cls } else { 0.0 };

    let mut selection_macs = 0u64;
    let (fc1_in_keep, expanded_keep) = match call.fixed {
        Some(sel) => {
            check_selection(sel, d, dm, call.layer)?;
            (sel.fc1_in_keep.clone(), sel.expanded_keep.clone())
        }
        None if policy.is_noop() => ((0..d).collect(), (0..dm).collect()),
        None => {
            let sample = sample_tokens(n, policy.sample_rate, call.seed, call.has_cls);
            let fc1_in_keep: Vec<usize> = if policy.fc1_keep >= 1.0 {
                (0..d).collect()
            } else {
                let scores =
                    unified_importance(input, a_cls, &sample, lambda_cls, policy.lambda_patch)?;
                select_channels(&scores, policy.fc1_keep)
            };
            let expanded_keep: Vec<usize> = if policy.fc2_keep >= 1.0 {
                (0..dm).collect()
            } else {
                // Score expanded channels on the CLS row plus the sampled rows only.
                let mut rows = Vec::with_capacity(sample.len() + 1);
                if a_cls.is_some() {
                    rows.push(0);
                }
                rows.extend_from_slice(&sample);
                let x_sub = input.select(&rows, &fc1_in_keep);
                let all: Vec<usize> = (0..dm).collect();
                let w1 = ffn.fc1.select(&fc1_in_keep, &all);
                let mut pre = x_sub.matmul(&w1);
                pre.add_row_vector(ffn.bfc1);
                let hidden_sub = pre.map(gelu);
                selection_macs = (rows.len() * fc1_in_keep.len() * dm) as u64;
                let a_sub = a_cls.map(|a| a.gather(&rows));
                let offset = usize::from(a_cls.is_some());
                let sub_sample: Vec<usize> = (offset..rows.len()).collect();
                let scores = unified_importance(
                    &hidden_sub,
                    a_sub.as_ref(),
                    &sub_sample,
                    lambda_cls,
                    policy.lambda_patch,
                )?;
                select_channels(&scores, policy.fc2_keep)
            };
            (fc1_in_keep, expanded_keep)
        }
    };

    let x = input.select_cols(&fc1_in_keep);
    let w1 = ffn.fc1.select(&fc1_in_keep, &expanded_keep);
    let mut pre = x.matmul(&w1);
    pre.add_row_vector(&ffn.bfc1.gather(&expanded_keep));
    let hidden_kept = pre.map(gelu);
    let w2 = ffn.fc2.select_rows(&expanded_keep);
    let mut output = hidden_kept.matmul(&w2);
    output.add_row_vector(ffn.bfc2);

    let kin = fc1_in_keep.len() as u64;
    let kexp = expanded_keep.len() as u64;
    let macs = n as u64 * kin * kexp + n as u64 * kexp * d as u64;

    let mut hidden = Matrix::zeros(n, dm);
    for i in 0..n {
        let src = hidden_kept.row(i);
        let dst = hidden.row_mut(i);
        for (&c, &v) in expanded_keep.iter().zip(src) {
            dst[c] = v;
        }
    }

    Ok(FfnOutput {
        output,
        hidden,
        selection: Some(ChannelSelection {
            layer: call.layer,
            fc1_in_keep,
            expanded_keep,
        }),
        macs,
        selection_macs,
    })
}

fn check_selection(sel: &ChannelSelection, d: usize, dm: usize, layer: usize) -> Result<()> {
    let check = |idx: &[usize], bound: usize, what: &str| -> Result<()> {
        if idx.is_empty() || idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ToastError::InvalidArgument(format!(
                "layer {layer}: {what} must be non-empty and strictly increasing"
            )));
        }
        match idx.iter().find(|&&i| i >= bound) {
            Some(&i) => Err(ToastError::IndexOutOfRange {
                tensor: format!("layer{layer}.{what}"),
                index: i,
                bound,
            }),
            None => Ok(()),
        }
    };
    check(&sel.fc1_in_keep, d, "fc1_in_keep")?;
    check(&sel.expanded_keep, dm, "expanded_keep")
}

/// A policy ready for use in the forward pass. Static policies carry the
/// selections frozen from a calibration batch.
#[derive(Debug, Clone)]
pub struct TcsRuntime {
    policy: TcsPolicy,
    frozen: Option<Vec<ChannelSelection>>,
}

impl TcsRuntime {
    /// Runtime that scores channels on every call.
    pub fn dynamic(config: &ModelConfig, policy: &TcsPolicy) -> Result<Self> {
        policy.validate(config)?;
        Ok(Self {
            policy: policy.resolved_for(config),
            frozen: None,
        })
    }

    /// Freezes the selections produced on `calibration` and reuses them for
    /// every subsequent call.
    pub fn calibrate(
        config: &ModelConfig,
        weights: &ModelWeights,
        calibration: &Matrix,
        policy: &TcsPolicy,
    ) -> Result<Self> {
        let dynamic = Self::dynamic(config, policy)?;
        let (_, trace) = crate::engine::forward(config, weights, calibration, Some(&dynamic))?;
        let frozen = trace
            .layers
            .into_iter()
            .map(|l| l.selection.expect("tcs forward records selections"))
            .collect();
        Ok(Self {
            policy: dynamic.policy,
            frozen: Some(frozen),
        })
    }

    /// Builds the runtime the policy's mode asks for.
    pub fn for_mode(
        config: &ModelConfig,
        weights: &ModelWeights,
        calibration: &Matrix,
        policy: &TcsPolicy,
    ) -> Result<Self> {
        match policy.mode {
            TcsMode::Dynamic => Self::dynamic(config, policy),
            TcsMode::Static => Self::calibrate(config, weights, calibration, policy),
        }
    }

    pub fn policy(&self) -> &TcsPolicy {
        &self.policy
    }

    pub fn frozen(&self) -> Option<&[ChannelSelection]> {
        self.frozen.as_deref()
    }

    pub(crate) fn call(&self, layer: usize, has_cls: bool) -> TcsCall<'_> {
        TcsCall {
            layer,
            policy: &self.policy.layers[layer],
            seed: layer_seed(self.policy.seed, layer),
            has_cls,
            fixed: self.frozen.as_ref().map(|f| &f[layer]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sample_takes_all_patches() {
        let s = sample_tokens(197, 1.0, 3, true);
        assert_eq!(s, (1..197).collect::<Vec<_>>());
        let s = sample_tokens(50, 1.0, 3, false);
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn minimum_sample_size() {
        let s = sample_tokens(197, 0.02, 5, true);
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&i| (1..197).contains(&i)));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_tokens(197, 0.2, 5, true).len(), 39);
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_tokens(197, 0.1, 42, true), sample_tokens(197, 0.1, 42, true));
        assert_ne!(sample_tokens(197, 0.1, 42, true), sample_tokens(197, 0.1, 43, true));
    }

    #[test]
    fn patch_term_off_leaves_cls_term() {
        let acts = Matrix::new(3, 2, vec![-1.5, 2.0, 7.0, 8.0, 9.0, -3.0]).unwrap();
        let a = Vector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let s = unified_importance(&acts, Some(&a), &[1, 2], 2.0, 0.0).unwrap();
        assert_eq!(s.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn constant_channel_without_cls() {
        let acts = Matrix::from_fn(6, 3, |_, j| if j == 1 { -2.5 } else { j as f32 });
        let s = unified_importance(&acts, None, &[0, 2, 5], 0.0, 1.5).unwrap();
        assert!((s.get(1) - 1.5 * 2.5).abs() < 1e-6);
    }

    #[test]
    fn empty_sample_is_an_error() {
        let acts = Matrix::zeros(2, 2);
        assert!(matches!(
            unified_importance(&acts, None, &[], 0.0, 1.0),
            Err(ToastError::EmptySample)
        ));
    }

    #[test]
    fn select_examples() {
        let s = Vector::new(vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        assert_eq!(select_channels(&s, 0.5), vec![1, 2]);
        assert_eq!(select_channels(&s, 1.0), vec![0, 1, 2, 3]);
        let flat = Vector::filled(10, 1.0);
        assert_eq!(select_channels(&flat, 0.3), vec![0, 1, 2]);
    }

    #[test]
    fn layer_adaptive_schedule() {
        let cfg = ModelConfig::deit_base();
        let p = TcsPolicy::layer_adaptive(&cfg, 0);
        p.validate(&cfg).unwrap();
        assert_eq!(p.layers[0].fc1_keep, 1.0);
        assert!((p.layers[11].fc1_keep - 0.7).abs() < 1e-12);
        assert_eq!(p.layers[5].fc2_keep, 1.0);
        assert!((p.layers[6].fc2_keep - 0.5).abs() < 1e-12);
        assert!((p.layers[11].fc2_keep - 0.1).abs() < 1e-12);
        assert!((p.layers[0].sample_rate - 0.02).abs() < 1e-12);
        assert!((p.layers[11].sample_rate - 0.2).abs() < 1e-12);
    }

    #[test]
    fn policy_bounds() {
        let cfg = ModelConfig::dense(1, 10, 8, 2, 16, true);
        let mut p = TcsPolicy::uniform(&cfg, LayerPolicy::uniform(1.0, 0.5, 0.1), 0);
        assert!(p.validate(&cfg).is_ok());
        p.layers[0].sample_rate = 0.5;
        assert!(p.validate(&cfg).is_err());
        p.layers[0].sample_rate = 1.0;
        p.layers[0].fc2_keep = 0.0;
        assert!(p.validate(&cfg).is_err());
    }

    #[test]
    fn json_shape() {
        let cfg = ModelConfig::dense(1, 10, 8, 2, 16, false);
        let p = TcsPolicy::uniform(&cfg, LayerPolicy::uniform(0.9, 0.5, 0.1), 7);
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["mode"], "dynamic");
        assert_eq!(v["seed"], 7);
        assert_eq!(v["layers"][0]["fc2_keep"], 0.5);
        assert_eq!(v["layers"][0]["lambda_cls"], 0.0);
        let back: TcsPolicy = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
