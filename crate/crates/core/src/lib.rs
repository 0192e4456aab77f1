//! Desk-scale laboratory for end-to-end speech transduction.
//!
//! Three model families — transducer (RNN-T), recurrent attention
//! encoder-decoder, and transformer attention encoder-decoder — built on a
//! small double-precision autodiff core, with streaming variants, lattice
//! losses, joint decoding and exact latency accounting, all exercised on a
//! synthetic toy recognition task.

pub mod data;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod layers;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod oracles;
pub mod optim;
pub mod pretrain;
pub mod streaming;

pub use error::{Error, Result};
