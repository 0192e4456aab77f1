//! Acoustic encoders shared by the model families.
//!
//! The recurrent encoder stacks LSTM blocks (standard or custom, optionally
//! bidirectional) with optional per-block or top-only future-context layers.
//! The transformer encoder stacks pre-LN blocks under a streaming mask.

use crate::error::{Error, Result};
use crate::layers::*;
use crate::numerics::{Tape, Tensor};
use crate::streaming::{AttentionMask, MaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextPlacement {
    None,
    /// Every block looks `lookahead` frames ahead; the receptive field grows
    /// linearly with depth.
    PerBlock { lookahead: usize },
    /// A single window on the top block only (the lookahead-convolution
    /// comparison point).
    TopOnly { lookahead: usize },
}

impl ContextPlacement {
    pub fn total_lookahead(&self, blocks: usize) -> usize {
        match *self {
            ContextPlacement::None => 0,
            ContextPlacement::PerBlock { lookahead } => blocks * lookahead,
            ContextPlacement::TopOnly { lookahead } => lookahead,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RnnEncoderConfig {
    pub input_dim: usize,
    pub blocks: usize,
    pub cell_size: usize,
    pub proj_size: usize,
    pub bidirectional: bool,
    pub custom_lstm: bool,
    pub context: ContextPlacement,
}

enum BlockBody {
    Standard {
        fw: LstmCell,
        bw: Option<LstmCell>,
        proj: Linear,
        ln: LayerNorm,
    },
    Custom(LstmBlockCustom),
}

struct RnnEncoderBlock {
    body: BlockBody,
    context: Option<ContextLayer>,
}

pub struct RnnEncoder {
    pub cfg: RnnEncoderConfig,
    blocks: Vec<RnnEncoderBlock>,
}

impl RnnEncoder {
    pub fn new(rng: &mut SeedRng, cfg: RnnEncoderConfig) -> Result<Self> {
        if cfg.bidirectional && cfg.custom_lstm {
            return Err(Error::Config(
                "custom LSTM blocks are streaming-only; bidirectional not supported".into(),
            ));
        }
        if cfg.bidirectional && cfg.context.total_lookahead(cfg.blocks) > 0 {
            return Err(Error::Config(
                "future-context layers are a streaming feature; encoder is already bidirectional"
                    .into(),
            ));
        }
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let input = if i == 0 { cfg.input_dim } else { cfg.proj_size };
            let body = if cfg.custom_lstm {
                BlockBody::Custom(LstmBlockCustom::new(rng, input, cfg.cell_size, cfg.proj_size))
            } else {
                let fw = LstmCell::new(rng, input, cfg.cell_size);
                let bw = cfg.bidirectional.then(|| LstmCell::new(rng, input, cfg.cell_size));
                let proj_in = if cfg.bidirectional { 2 * cfg.cell_size } else { cfg.cell_size };
                BlockBody::Standard {
                    fw,
                    bw,
                    proj: Linear::new(rng, proj_in, cfg.proj_size, true),
                    ln: LayerNorm::new(cfg.proj_size),
                }
            };
            let context = match cfg.context {
                ContextPlacement::None => None,
                ContextPlacement::PerBlock { lookahead } => {
                    Some(ContextLayer::new(lookahead, cfg.proj_size))
                }
                ContextPlacement::TopOnly { lookahead } if i + 1 == cfg.blocks => {
                    Some(ContextLayer::new(lookahead, cfg.proj_size))
                }
                ContextPlacement::TopOnly { .. } => None,
            };
            blocks.push(RnnEncoderBlock { body, context });
        }
        Ok(RnnEncoder { cfg, blocks })
    }

    pub fn output_size(&self) -> usize {
        self.cfg.proj_size
    }

    pub fn is_streaming(&self) -> bool {
        !self.cfg.bidirectional
    }

    /// Declared receptive field into the future, in encoder frames.
    pub fn total_lookahead_frames(&self) -> usize {
        self.cfg.context.total_lookahead(self.cfg.blocks)
    }

    /// `[T, input_dim] -> [T, proj_size]`.
    pub fn forward(&self, tape: &Tape, xs: &Tensor) -> Result<Tensor> {
        let mut h = xs.clone();
        for block in &self.blocks {
            h = match &block.body {
                BlockBody::Standard { fw, bw, proj, ln } => {
                    let states = match bw {
                        None => run_cell(tape, fw, &h, false)?,
                        Some(bw_cell) => {
                            let f = run_cell(tape, fw, &h, false)?;
                            let b = run_cell(tape, bw_cell, &h, true)?;
                            tape.concat_cols(&[&f, &b])?
                        }
                    };
                    let mut y = proj.forward(tape, &states)?;
                    if let Some(ctx_layer) = &block.context {
                        y = ctx_layer.forward(tape, &y)?;
                    }
                    ln.forward(tape, &y)?
                }
                BlockBody::Custom(custom) => {
                    let t_len = h.rows();
                    let mut state = custom.zero_state();
                    let mut rows = Vec::with_capacity(t_len);
                    for t in 0..t_len {
                        let x = tape.row(&h, t)?;
                        let (out, next) = custom.step(tape, &x, &state)?;
                        state = next;
                        rows.push(out);
                    }
                    let refs: Vec<&Tensor> = rows.iter().collect();
                    let mut y = tape.concat_rows(&refs)?;
                    if let Some(ctx_layer) = &block.context {
                        y = ctx_layer.forward(tape, &y)?;
                    }
                    y
                }
            };
        }
        Ok(h)
    }
}

impl Parameterized for RnnEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, block) in self.blocks.iter().enumerate() {
            let p = format!("{prefix}.block{i}");
            match &block.body {
                BlockBody::Standard { fw, bw, proj, ln } => {
                    fw.collect_params(&format!("{p}.fw"), out);
                    if let Some(bw) = bw {
                        bw.collect_params(&format!("{p}.bw"), out);
                    }
                    proj.collect_params(&format!("{p}.proj"), out);
                    ln.collect_params(&format!("{p}.ln"), out);
                }
                BlockBody::Custom(c) => c.collect_params(&format!("{p}.custom"), out),
            }
            if let Some(ctx_layer) = &block.context {
                ctx_layer.collect_params(&format!("{p}.context"), out);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerEncoderConfig {
    pub input_dim: usize,
    pub blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub mask: MaskKind,
}

pub struct TransformerEncoder {
    pub cfg: TransformerEncoderConfig,
    input_proj: Linear,
    blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(rng: &mut SeedRng, cfg: TransformerEncoderConfig) -> Self {
        let input_proj = Linear::new(rng, cfg.input_dim, cfg.model_dim, true);
        let blocks = (0..cfg.blocks)
            .map(|_| TransformerBlock::encoder(rng, cfg.model_dim, cfg.heads, cfg.head_dim, cfg.ff_dim))
            .collect();
        TransformerEncoder {
            final_ln: LayerNorm::new(cfg.model_dim),
            input_proj,
            blocks,
            cfg,
        }
    }

    pub fn total_lookahead_frames(&self) -> usize {
        match self.cfg.mask {
            MaskKind::Lookahead { per_block } => self.cfg.blocks * per_block,
            _ => 0,
        }
    }

    /// `[T, input_dim] -> [T, model_dim]` under the configured mask.
    pub fn forward(&self, tape: &Tape, xs: &Tensor) -> Result<Tensor> {
        self.forward_masked(tape, xs, self.cfg.mask)
    }

    pub fn forward_masked(&self, tape: &Tape, xs: &Tensor, mask: MaskKind) -> Result<Tensor> {
        let t_len = xs.rows();
        let mask = AttentionMask::build(mask, t_len)?;
        let mut h = self.input_proj.forward(tape, xs)?;
        for block in &self.blocks {
            h = block.forward(tape, &h, mask.flat(), None)?;
        }
        self.final_ln.forward(tape, &h)
    }
}

impl Parameterized for TransformerEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.input_proj.collect_params(&format!("{prefix}.input"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("{prefix}.block{i}"), out);
        }
        self.final_ln.collect_params(&format!("{prefix}.final_ln"), out);
    }
}
