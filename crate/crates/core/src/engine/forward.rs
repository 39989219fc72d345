use serde::{Deserialize, Serialize};

use super::{BlockWeights, HeadWeights, ModelConfig, ModelWeights};
use crate::error::{Result, ToastError};
use crate::linalg::{layer_norm, softmax_in_place, Matrix, Vector, LN_EPS};
use crate::par;
use crate::tcs::{ffn_forward_dense, ffn_forward_tcs, ChannelSelection, FfnWeights, TcsRuntime};

/// Intermediate values recorded for one block.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// FFN input after the second LayerNorm, `N × D`.
    pub ffn_input: Matrix,
    /// Post-GELU FC1 activations, `N × D_mlp` (zero in dropped channels).
    pub fc1_act: Matrix,
    /// CLS attention row averaged over heads; `None` without a CLS token.
    pub cls_attention: Option<Vector>,
    pub selection: Option<ChannelSelection>,
}

/// Multiply-accumulates actually executed, per layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub mhsa: Vec<u64>,
    pub ffn: Vec<u64>,
    /// Work spent scoring channels; not part of the model's FLOPs.
    pub selection: u64,
}

impl OpCount {
    pub fn mhsa_total(&self) -> u64 {
        self.mhsa.iter().sum()
    }

    pub fn ffn_total(&self) -> u64 {
        self.ffn.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.mhsa_total() + self.ffn_total()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub ops: OpCount,
}

/// Attention of a single head on LayerNorm-ed input.
#[derive(Debug, Clone)]
pub struct HeadAttention {
    /// Softmax attention matrix, `N × N`.
    pub probs: Matrix,
    /// `A·V·W_proj`, `N × D` (projection bias excluded).
    pub projected: Matrix,
    pub macs: u64,
}

pub fn head_attention(x: &Matrix, head: &HeadWeights, scale: f32) -> HeadAttention {
    let n = x.rows() as u64;
    let d = x.cols() as u64;
    let k = head.width() as u64;
    let mut q = x.matmul(&head.wq);
    q.add_row_vector(&head.bq);
    let mut kmat = x.matmul(&head.wk);
    kmat.add_row_vector(&head.bk);
    let mut v = x.matmul(&head.wv);
    v.add_row_vector(&head.bv);

    let mut probs = q.matmul_transposed(&kmat);
    let cols = probs.cols();
    for i in 0..probs.rows() {
        let row = probs.row_mut(i);
        for s in row.iter_mut() {
            *s *= scale;
        }
        softmax_in_place(row);
    }
    debug_assert_eq!(cols, x.rows());
    let context = probs.matmul(&v);
    let projected = context.matmul(&head.wproj);
    let macs = 3 * n * d * k + n * n * k + n * n * k + n * k * d;
    HeadAttention {
        probs,
        projected,
        macs,
    }
}

/// Multi-head attention on LayerNorm-ed input: returns `Σ_h O^h + b_proj`,
/// the head-averaged CLS attention row and the MAC count.
pub fn mhsa_forward(
    config: &ModelConfig,
    layer: usize,
    block: &BlockWeights,
    x: &Matrix,
) -> (Matrix, Option<Vector>, u64) {
    let scale = config.attention_scale(layer);
    let heads = par::map_range(block.heads.len(), |h| head_attention(x, &block.heads[h], scale));
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut macs = 0;
    for h in &heads {
        out.add_assign(&h.projected);
        macs += h.macs;
    }
    out.add_row_vector(&block.bproj);
    let cls = config.has_cls.then(|| {
        let n = x.rows();
        let mut avg = vec![0.0f32; n];
        for h in &heads {
            for (a, p) in avg.iter_mut().zip(h.probs.row(0)) {
                *a += p;
            }
        }
        let inv = 1.0 / heads.len() as f32;
        Vector::from_raw(avg.into_iter().map(|a| a * inv).collect())
    });
    (out, cls, macs)
}

/// One pre-LN block: `x += MHSA(LN1(x)); x += FFN(LN2(x))`.
pub fn block_forward(
    config: &ModelConfig,
    layer: usize,
    block: &BlockWeights,
    x: &Matrix,
    tcs: Option<&TcsRuntime>,
) -> Result<(Matrix, LayerTrace, u64, u64, u64)> {
    let ln1 = layer_norm(x, &block.ln1_scale, &block.ln1_shift, LN_EPS);
    let (attn, cls_attention, mhsa_macs) = mhsa_forward(config, layer, block, &ln1);
    let mut h = x.clone();
    h.add_assign(&attn);

    let ffn_input = layer_norm(&h, &block.ln2_scale, &block.ln2_shift, LN_EPS);
    let ffn = FfnWeights {
        fc1: &block.fc1,
        bfc1: &block.bfc1,
        fc2: &block.fc2,
        bfc2: &block.bfc2,
    };
    let ffn_out = match tcs {
        Some(rt) => ffn_forward_tcs(
            ffn,
            &ffn_input,
            cls_attention.as_ref(),
            rt.call(layer, config.has_cls),
        )?,
        None => ffn_forward_dense(ffn, &ffn_input)?,
    };
    h.add_assign(&ffn_out.output);
    let trace = LayerTrace {
        ffn_input,
        fc1_act: ffn_out.hidden,
        cls_attention,
        selection: ffn_out.selection,
    };
    Ok((h, trace, mhsa_macs, ffn_out.macs, ffn_out.selection_macs))
}

/// Runs every block on pre-embedded tokens (`N × D`).
pub fn forward(
    config: &ModelConfig,
    weights: &ModelWeights,
    input: &Matrix,
    tcs: Option<&TcsRuntime>,
) -> Result<(Matrix, ForwardTrace)> {
    config.validate()?;
    weights.validate(config)?;
    if input.dims() != (config.num_tokens, config.embed_dim) {
        return Err(ToastError::shape(
            None,
            "input",
            format!(
                "expected {}x{}, found {}x{}",
                config.num_tokens,
                config.embed_dim,
                input.rows(),
                input.cols()
            ),
        ));
    }
    if let Some(rt) = tcs {
        rt.policy().validate(config)?;
    }
    let mut x = input.clone();
    let mut layers = Vec::with_capacity(config.num_layers);
    let mut ops = OpCount::default();
    for (l, block) in weights.blocks.iter().enumerate() {
        let (next, trace, mhsa, ffn, sel) = block_forward(config, l, block, &x, tcs)?;
        x = next;
        layers.push(trace);
        ops.mhsa.push(mhsa);
        ops.ffn.push(ffn);
        ops.selection += sel;
    }
    if !x.is_finite() {
        return Err(ToastError::NonFinite("forward output".into()));
    }
    Ok((x, ForwardTrace { layers, ops }))
}
