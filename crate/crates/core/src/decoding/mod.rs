//! Inference: transducer beam search, joint lattice/attention beam search,
//! trigger-released streaming decoding, hard monotonic decoding, and error
//! rate scoring.

mod attention_beam;
mod ctc_prefix;
mod mocha_decode;
mod rnnt_beam;
mod wer;

pub use attention_beam::{
    attention_beam_decode, triggered_attention_decode, AttentionScorer, JointDecodeConfig,
    RankedHypothesis,
};
pub use ctc_prefix::{CtcPrefixScorer, PrefixScore};
pub use mocha_decode::{mocha_hard_decode, MochaDecodeResult};
pub use rnnt_beam::{rnnt_beam_decode, rnnt_greedy_decode};
pub use wer::{word_error_rate, WerBreakdown};
