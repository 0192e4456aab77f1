//! The three end-to-end model families, assembled from the layer blocks.

mod checkpoint;
mod encoder;
mod mocha;
mod rnn_aed;
mod rnnt;
mod transformer_aed;

pub use checkpoint::{apply_checkpoint, load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use encoder::{
    ContextPlacement, RnnEncoder, RnnEncoderConfig, TransformerEncoder, TransformerEncoderConfig,
};
pub use mocha::{mocha_expected_attention, mocha_hard_attend, MochaAttention};
pub use rnn_aed::{AedAttentionKind, AedDecodeState, RnnAedConfig, RnnAttentionEncDec};
pub use rnnt::{JointNet, PredState, PredictionNet, RnnTransducer, RnntConfig};
pub use transformer_aed::{TransformerAed, TransformerAedConfig};

use crate::layers::Parameterized;
use crate::numerics::Tensor;

/// A trained model of any family.
pub enum Model {
    Rnnt(RnnTransducer),
    RnnAed(RnnAttentionEncDec),
    TransformerAed(TransformerAed),
}

impl Model {
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        match self {
            Model::Rnnt(m) => m.named_params(),
            Model::RnnAed(m) => m.named_params(),
            Model::TransformerAed(m) => m.named_params(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }
}
