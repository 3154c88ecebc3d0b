//! Transformer building blocks evaluated on a per-call [`Graph`].

mod blocks;
mod graph;
mod params;

pub use blocks::{
    init_block, init_layer_norm, init_linear, layer_norm, linear, multi_head_attention, pool_first,
    sinusoidal_positions, transformer_block, BlockConfig, LayerOptions, LN_EPS,
};
pub use graph::{AttentionRecord, Graph, Mode};
pub use params::ParamStore;
