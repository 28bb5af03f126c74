//! Minimal ViT forward pass with size-biased attention and a compression
//! hook between the attention residual and the FFN of each block.

mod config;
mod forward;
mod weights;

pub use config::ModelConfig;
pub use forward::{
    attention_forward, block_forward, forward_tokens, model_forward, patch_embed,
    AttentionByproducts, TokenBatch,
};
pub use weights::{tensor_specs, LayerWeights, ModelWeights};
