use serde::{Deserialize, Serialize};

use crate::error::{Result, ToastError};

/// Architecture hyperparameters of a plain ViT encoder.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_tokens: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub has_cls: bool,
    /// Live per-head width of each layer after pruning.
    pub per_layer_head_dim: Vec<usize>,
    /// Keep the `1/sqrt(head_dim)` attention scale after pruning instead of
    /// rescaling by the live width.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scale_original: bool,
}

impl ModelConfig {
    /// Unpruned config with `head_dim = embed_dim / num_heads`.
    pub fn dense(
        num_layers: usize,
        num_tokens: usize,
        embed_dim: usize,
        num_heads: usize,
        mlp_dim: usize,
        has_cls: bool,
    ) -> Self {
        let head_dim = embed_dim.checked_div(num_heads).unwrap_or(0);
        Self {
            num_layers,
            num_tokens,
            embed_dim,
            num_heads,
            head_dim,
            mlp_dim,
            has_cls,
            per_layer_head_dim: vec![head_dim; num_layers],
            scale_original: false,
        }
    }

    /// DeiT-Tiny at 224px: 196 patches plus CLS.
    pub fn deit_tiny() -> Self {
        Self::dense(12, 197, 192, 3, 768, true)
    }

    pub fn deit_small() -> Self {
        Self::dense(12, 197, 384, 6, 1536, true)
    }

    pub fn deit_base() -> Self {
        Self::dense(12, 197, 768, 12, 3072, true)
    }

    /// The same architecture with every head restored to full width.
    pub fn unpruned(&self) -> Self {
        Self {
            per_layer_head_dim: vec![self.head_dim; self.num_layers],
            ..self.clone()
        }
    }

    pub fn is_unpruned(&self) -> bool {
        self.per_layer_head_dim.iter().all(|&k| k == self.head_dim)
    }

    /// Live head width of `layer`.
    pub fn live_head_dim(&self, layer: usize) -> usize {
        self.per_layer_head_dim[layer]
    }

    /// Attention logit scale for `layer`.
    pub fn attention_scale(&self, layer: usize) -> f32 {
        let width = if self.scale_original {
            self.head_dim
        } else {
            self.live_head_dim(layer)
        };
        1.0 / (width as f32).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ToastError::InvalidArgument(msg));
        if self.num_layers == 0
            || self.num_tokens == 0
            || self.embed_dim == 0
            || self.num_heads == 0
            || self.head_dim == 0
            || self.mlp_dim == 0
        {
            return bad("model dimensions must be positive".into());
        }
        if self.embed_dim != self.num_heads * self.head_dim {
            return bad(format!(
                "embed_dim {} != num_heads {} x head_dim {}",
                self.embed_dim, self.num_heads, self.head_dim
            ));
        }
        if self.per_layer_head_dim.len() != self.num_layers {
            return bad(format!(
                "per_layer_head_dim has {} entries for {} layers",
                self.per_layer_head_dim.len(),
                self.num_layers
            ));
        }
        if let Some((l, k)) = self
            .per_layer_head_dim
            .iter()
            .enumerate()
            .find(|(_, &k)| k == 0 || k > self.head_dim)
        {
            return bad(format!(
                "layer {l}: head dim {k} outside 1..={}",
                self.head_dim
            ));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
