//! Streaming machinery: encoder attention masks, latency accounting and the
//! causality probe used throughout the test suites.
//!
//! Latency accounting follows the arithmetic the models are configured
//! with: a lookahead encoder waits `blocks * per_block` encoder frames; a
//! chunked encoder makes a frame wait for its chunk to fill and for the
//! decoder to consume the completed chunk, so its per-frame wait spans one
//! to two chunks with a 1.5-chunk average.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Full,
    /// Per-block future window, in encoder frames.
    Lookahead { per_block: usize },
    /// Fixed-length chunks from frame 0; queries see their whole chunk and
    /// everything before it.
    Chunk { chunk_frames: usize },
}

/// A concrete `T x T` allow/forbid relation for one encoder block.
pub struct AttentionMask {
    pub kind: MaskKind,
    pub t_len: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn full(t_len: usize) -> Self {
        AttentionMask {
            kind: MaskKind::Full,
            t_len,
            allow: vec![true; t_len * t_len],
        }
    }

    /// Keys up to `t + per_block` are visible from query `t`. Stacked over
    /// `N` blocks the receptive field grows to `N * per_block` future
    /// frames.
    pub fn lookahead(t_len: usize, per_block: usize) -> Self {
        let mut allow = vec![false; t_len * t_len];
        for q in 0..t_len {
            let end = (q + per_block + 1).min(t_len);
            for k in 0..end {
                allow[q * t_len + k] = true;
            }
        }
        AttentionMask {
            kind: MaskKind::Lookahead { per_block },
            t_len,
            allow,
        }
    }

    /// Keys in chunks up to and including the query's chunk are visible.
    pub fn chunk(t_len: usize, chunk_frames: usize) -> Result<Self> {
        if chunk_frames == 0 {
            return Err(Error::invalid("chunk mask needs chunk_frames >= 1"));
        }
        let mut allow = vec![false; t_len * t_len];
        for q in 0..t_len {
            let end = (((q / chunk_frames) + 1) * chunk_frames).min(t_len);
            for k in 0..end {
                allow[q * t_len + k] = true;
            }
        }
        Ok(AttentionMask {
            kind: MaskKind::Chunk { chunk_frames },
            t_len,
            allow,
        })
    }

    pub fn build(kind: MaskKind, t_len: usize) -> Result<Self> {
        Ok(match kind {
            MaskKind::Full => Self::full(t_len),
            MaskKind::Lookahead { per_block } => Self::lookahead(t_len, per_block),
            MaskKind::Chunk { chunk_frames } => Self::chunk(t_len, chunk_frames)?,
        })
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allow[query * self.t_len + key]
    }

    pub fn flat(&self) -> &[bool] {
        &self.allow
    }

    /// Last encoder frame whose state is computable once frame `t` has been
    /// recognized under this mask (used by trigger-released decoding).
    pub fn visible_end(&self, t: usize) -> usize {
        match self.kind {
            MaskKind::Full => self.t_len - 1,
            MaskKind::Lookahead { .. } => t.min(self.t_len - 1),
            MaskKind::Chunk { chunk_frames } => {
                (((t / chunk_frames) + 1) * chunk_frames - 1).min(self.t_len - 1)
            }
        }
    }
}

/// Frame-level latency declaration for an encoder configuration.
#[derive(Debug, Clone, Copy)]
pub struct LatencySpec {
    pub encoder: MaskKind,
    /// Encoder blocks (only meaningful for lookahead encoders).
    pub blocks: usize,
    /// Input frames consumed per encoder frame.
    pub frontend_stride: usize,
    /// Input frame shift in milliseconds.
    pub frame_shift_ms: u32,
    /// Extra decoder wait, e.g. a lookahead decoder's own window.
    pub decoder_extra_ms: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyMs {
    pub min_ms: u32,
    pub max_ms: u32,
    pub avg_ms: u32,
    pub encoder_frames: usize,
    pub decoder_extra_ms: u32,
}

impl LatencyMs {
    pub fn avg_with_decoder(&self) -> u32 {
        self.avg_ms + self.decoder_extra_ms
    }
}

/// Closed-form latency. Returns `None` for a non-streaming (full) encoder,
/// whose latency is the whole utterance.
pub fn encoder_latency_ms(spec: &LatencySpec) -> Option<LatencyMs> {
    let per_frame_ms = spec.frontend_stride as u32 * spec.frame_shift_ms;
    match spec.encoder {
        MaskKind::Full => None,
        MaskKind::Lookahead { per_block } => {
            let frames = spec.blocks * per_block;
            let ms = frames as u32 * per_frame_ms;
            Some(LatencyMs {
                min_ms: ms,
                max_ms: ms,
                avg_ms: ms,
                encoder_frames: frames,
                decoder_extra_ms: spec.decoder_extra_ms,
            })
        }
        MaskKind::Chunk { chunk_frames } => {
            let chunk_ms = chunk_frames as u32 * per_frame_ms;
            Some(LatencyMs {
                min_ms: chunk_ms,
                max_ms: 2 * chunk_ms,
                avg_ms: 3 * chunk_ms / 2,
                encoder_frames: chunk_frames,
                decoder_extra_ms: spec.decoder_extra_ms,
            })
        }
    }
}

impl LatencySpec {
    /// Declared mask-level receptive field: how many future encoder frames
    /// can influence the encoder output at `t` in a `t_len`-frame utterance.
    pub fn max_future_frames(&self, t: usize, t_len: usize) -> usize {
        let horizon = t_len - 1 - t;
        match self.encoder {
            MaskKind::Full => horizon,
            MaskKind::Lookahead { per_block } => (self.blocks * per_block).min(horizon),
            MaskKind::Chunk { chunk_frames } => {
                let end = ((t / chunk_frames) + 1) * chunk_frames - 1;
                (end - t).min(horizon)
            }
        }
    }
}

/// Does perturbing input frame `perturb_at` change the encoder output at
/// frame `t`? The probe adds a fixed delta to every feature of that frame
/// and compares outputs with absolute tolerance 1e-9.
pub fn causality_probe<F>(encode: F, x: &Tensor, t: usize, perturb_at: usize, delta: f64) -> Result<bool>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    let t_len = x.rows();
    if t >= t_len || perturb_at >= t_len {
        return Err(Error::invalid(format!(
            "causality_probe: frames {t}/{perturb_at} outside 0..{t_len}"
        )));
    }
    let tape = Tape::inference();
    let base = encode(&tape, x)?;
    let cols = x.cols();
    let mut bumped = x.to_vec();
    for c in 0..cols {
        bumped[perturb_at * cols + c] += delta;
    }
    let xb = Tensor::from_vec(bumped, x.shape())?;
    let tape = Tape::inference();
    let probed = encode(&tape, &xb)?;
    let ocols = base.cols();
    let (bv, pv) = (base.values(), probed.values());
    let changed = (0..ocols).any(|c| (bv[t * ocols + c] - pv[t * ocols + c]).abs() > 1e-9);
    Ok(changed)
}

/// Largest future offset whose perturbation still changes the output at `t`.
pub fn measured_future_field<F>(encode: F, x: &Tensor, t: usize, delta: f64) -> Result<usize>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor> + Copy,
{
    let t_len = x.rows();
    for d in (1..t_len - t).rev() {
        if causality_probe(encode, x, t, t + d, delta)? {
            return Ok(d);
        }
    }
    Ok(0)
}
