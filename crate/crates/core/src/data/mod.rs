//! Synthetic corpus, feature pipeline and tokenization.

mod corpus;
mod files;
mod vocab;

pub use corpus::{
    generate_synthetic_corpus, stack_superframes, token_prototypes, FeatureSequence,
    SyntheticTaskSpec, Utterance,
};
pub use files::{read_corpus, write_alignments, write_corpus};
pub use vocab::{Vocab, BLANK, EOS, RESERVED, SOS};
