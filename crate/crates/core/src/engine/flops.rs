use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Result, ToastError};

/// Kept FFN widths of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfnKeep {
    pub kept_fc1_in: usize,
    pub kept_expanded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    pub head_dim: usize,
    pub kept_fc1_in: usize,
    pub kept_expanded: usize,
    pub mhsa_flops: u64,
    pub ffn_flops: u64,
}

/// Analytic cost of a forward pass, one multiply-accumulate counted as one
/// FLOP. Patch embedding and the classifier head are not included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub mhsa_total: u64,
    pub ffn_total: u64,
    pub total: u64,
    /// Cost of the unpruned architecture with full FFNs.
    pub dense_total: u64,
    pub reduction_percent: f64,
}

impl FlopsReport {
    pub fn gflops(&self) -> f64 {
        self.total as f64 / 1e9
    }

    pub fn ffn_share(&self) -> f64 {
        self.ffn_total as f64 / self.total as f64
    }
}

pub fn dense_ffn_keep(config: &ModelConfig) -> Vec<FfnKeep> {
    vec![
        FfnKeep {
            kept_fc1_in: config.embed_dim,
            kept_expanded: config.mlp_dim,
        };
        config.num_layers
    ]
}

fn mhsa_macs(n: u64, d: u64, heads: u64, k: u64) -> u64 {
    let hk = heads * k;
    3 * n * d * hk + n * n * hk + n * n * hk + n * hk * d
}

fn ffn_macs(n: u64, d: u64, keep: FfnKeep) -> u64 {
    let kin = keep.kept_fc1_in as u64;
    let kexp = keep.kept_expanded as u64;
    n * kin * kexp + n * kexp * d
}

fn totals(config: &ModelConfig, keep: &[FfnKeep]) -> Vec<LayerFlops> {
    let n = config.num_tokens as u64;
    let d = config.embed_dim as u64;
    let h = config.num_heads as u64;
    keep.iter()
        .enumerate()
        .map(|(l, &fk)| {
            let k = config.per_layer_head_dim[l];
            LayerFlops {
                layer: l,
                head_dim: k,
                kept_fc1_in: fk.kept_fc1_in,
                kept_expanded: fk.kept_expanded,
                mhsa_flops: mhsa_macs(n, d, h, k as u64),
                ffn_flops: ffn_macs(n, d, fk),
            }
        })
        .collect()
}

/// Per-layer and total MACs for `config` with the given FFN widths (dense
/// when `None`), plus the reduction against the unpruned architecture.
pub fn count_flops(config: &ModelConfig, ffn_keep: Option<&[FfnKeep]>) -> Result<FlopsReport> {
    config.validate()?;
    let dense_keep = dense_ffn_keep(config);
    let keep = ffn_keep.unwrap_or(&dense_keep);
    if keep.len() != config.num_layers {
        return Err(ToastError::InvalidArgument(format!(
            "{} FFN entries for {} layers",
            keep.len(),
            config.num_layers
        )));
    }
    for (l, k) in keep.iter().enumerate() {
        if k.kept_fc1_in == 0
            || k.kept_fc1_in > config.embed_dim
            || k.kept_expanded == 0
            || k.kept_expanded > config.mlp_dim
        {
            return Err(ToastError::InvalidArgument(format!(
                "layer {l}: kept FFN widths ({}, {}) outside ({}, {})",
                k.kept_fc1_in, k.kept_expanded, config.embed_dim, config.mlp_dim
            )));
        }
    }
    let layers = totals(config, keep);
    let mhsa_total = layers.iter().map(|l| l.mhsa_flops).sum();
    let ffn_total = layers.iter().map(|l| l.ffn_flops).sum();
    let total = mhsa_total + ffn_total;
    let dense_total: u64 = totals(&config.unpruned(), &dense_keep)
        .iter()
        .map(|l| l.mhsa_flops + l.ffn_flops)
        .sum();
    let reduction_percent = 100.0 * (1.0 - total as f64 / dense_total as f64);
    Ok(FlopsReport {
        layers,
        mhsa_total,
        ffn_total,
        total,
        dense_total,
        reduction_percent,
    })
}
