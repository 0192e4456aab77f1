//! Model building blocks: LSTM variants, future-context layer, multi-head
//! attention, pre-LN transformer blocks and the convolutional frontend.

mod attention;
mod common;
mod context;
mod lstm;
mod transformer;
mod vgg;

pub use attention::MultiHeadAttention;
pub use common::{
    init_matrix, ones_param, push_param, uniform, zeros_param, Embedding, LayerNorm, Linear,
    Parameterized, SeedRng,
};
pub use context::ContextLayer;
pub use lstm::{run_cell, LstmBlockCustom, LstmBlockStandard, LstmCell, LstmState};
pub use transformer::{FeedForward, TransformerBlock};
pub use vgg::VggFrontend;
