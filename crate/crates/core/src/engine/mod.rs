//! Plain pre-LN ViT encoder blocks with trace capture and MAC accounting.

mod config;
mod flops;
mod forward;
mod weights;

pub use config::ModelConfig;
pub use flops::{count_flops, dense_ffn_keep, FfnKeep, FlopsReport, LayerFlops};
pub use forward::{
    block_forward, forward, head_attention, mhsa_forward, ForwardTrace, HeadAttention, LayerTrace,
    OpCount,
};
pub use weights::{names, BlockWeights, HeadWeights, ModelWeights};
