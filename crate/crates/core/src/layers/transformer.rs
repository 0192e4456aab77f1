//! Pre-LN transformer blocks.
//!
//! Each block normalizes before its sublayers and adds residual
//! connections around them. Decoder blocks carry a third sublayer that
//! attends over the encoder output.

use crate::error::Result;
use crate::layers::attention::MultiHeadAttention;
use crate::layers::common::*;
use crate::numerics::{Tape, Tensor};

pub struct FeedForward {
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    pub fn new(rng: &mut SeedRng, model_dim: usize, hidden: usize) -> Self {
        FeedForward {
            lin1: Linear::new(rng, model_dim, hidden, true),
            lin2: Linear::new(rng, hidden, model_dim, true),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        self.lin2.forward(tape, &tape.relu(&self.lin1.forward(tape, x)?)?)
    }
}

impl Parameterized for FeedForward {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.lin1.collect_params(&format!("{prefix}.lin1"), out);
        self.lin2.collect_params(&format!("{prefix}.lin2"), out);
    }
}

pub struct TransformerBlock {
    ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl TransformerBlock {
    pub fn encoder(rng: &mut SeedRng, model_dim: usize, heads: usize, head_dim: usize, ff_dim: usize) -> Self {
        TransformerBlock {
            ln_self: LayerNorm::new(model_dim),
            self_attn: MultiHeadAttention::new(rng, model_dim, heads, head_dim),
            cross: None,
            ln_ff: LayerNorm::new(model_dim),
            ff: FeedForward::new(rng, model_dim, ff_dim),
        }
    }

    pub fn decoder(rng: &mut SeedRng, model_dim: usize, heads: usize, head_dim: usize, ff_dim: usize) -> Self {
        TransformerBlock {
            ln_self: LayerNorm::new(model_dim),
            self_attn: MultiHeadAttention::new(rng, model_dim, heads, head_dim),
            cross: Some((
                LayerNorm::new(model_dim),
                MultiHeadAttention::new(rng, model_dim, heads, head_dim),
            )),
            ln_ff: LayerNorm::new(model_dim),
            ff: FeedForward::new(rng, model_dim, ff_dim),
        }
    }

    /// `x: [T, model]`; `self_allow` is a `T*T` mask. For decoder blocks,
    /// `memory` carries the encoder output and a `T*Tmem` mask.
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        self_allow: &[bool],
        memory: Option<(&Tensor, &[bool])>,
    ) -> Result<Tensor> {
        let normed = self.ln_self.forward(tape, x)?;
        let attn = self.self_attn.forward(tape, &normed, &normed, &normed, self_allow)?;
        let mut h = tape.add(x, &attn)?;
        if let Some((ln_c, cross)) = &self.cross {
            let (mem, mem_allow) = memory.ok_or_else(|| {
                crate::error::Error::invalid("decoder block needs encoder memory")
            })?;
            let normed = ln_c.forward(tape, &h)?;
            let ctx = cross.forward(tape, &normed, mem, mem, mem_allow)?;
            h = tape.add(&h, &ctx)?;
        }
        let normed = self.ln_ff.forward(tape, &h)?;
        let ff = self.ff.forward(tape, &normed)?;
        tape.add(&h, &ff)
    }
}

impl Parameterized for TransformerBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln_self.collect_params(&format!("{prefix}.ln_self"), out);
        self.self_attn.collect_params(&format!("{prefix}.self_attn"), out);
        if let Some((ln_c, cross)) = &self.cross {
            ln_c.collect_params(&format!("{prefix}.ln_cross"), out);
            cross.collect_params(&format!("{prefix}.cross_attn"), out);
        }
        self.ln_ff.collect_params(&format!("{prefix}.ln_ff"), out);
        self.ff.collect_params(&format!("{prefix}.ff"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;

    #[test]
    fn zeroed_output_projections_make_identity() {
        let mut rng = SeedRng::seed_from_u64(11);
        let block = TransformerBlock::encoder(&mut rng, 4, 2, 2, 8);
        for (name, p) in block.named_params() {
            if name.ends_with("self_attn.out") || name.ends_with("ff.lin2.weight") || name.ends_with("ff.lin2.bias") {
                p.set_values(&vec![0.0; p.len()]);
            }
        }
        let x = Tensor::from_vec(uniform(&mut rng, 12, 1.0), &[3, 4]).unwrap();
        let tape = Tape::new();
        let y = block.forward(&tape, &x, &vec![true; 9], None).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn two_block_stack_gradient() {
        let mut rng = SeedRng::seed_from_u64(12);
        let b1 = TransformerBlock::encoder(&mut rng, 3, 1, 3, 4);
        let b2 = TransformerBlock::encoder(&mut rng, 3, 1, 3, 4);
        let x = Tensor::from_vec(uniform(&mut rng, 9, 1.0), &[3, 3]).unwrap();
        let mut params: Vec<Tensor> = Vec::new();
        params.extend(b1.named_params().into_iter().map(|(_, p)| p));
        params.extend(b2.named_params().into_iter().map(|(_, p)| p));
        let allow = vec![true; 9];
        let rel = finite_difference_check(
            |tape| {
                let h = b1.forward(tape, &x, &allow, None)?;
                let y = b2.forward(tape, &h, &allow, None)?;
                tape.sum_all(&tape.mul(&y, &y)?)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(rel <= 1e-4, "rel err {rel}");
    }

    #[test]
    fn chunk_mask_blocks_later_chunks() {
        let mut rng = SeedRng::seed_from_u64(13);
        let block = TransformerBlock::encoder(&mut rng, 3, 1, 3, 4);
        // 4 frames, chunks of 2: frame 0 may see frames 0-1 only.
        let mut allow = vec![false; 16];
        for q in 0..4usize {
            let end = if q < 2 { 2 } else { 4 };
            for k in 0..end {
                allow[q * 4 + k] = true;
            }
        }
        let base = uniform(&mut rng, 12, 1.0);
        let mut bumped = base.clone();
        bumped[3 * 3] += 1.0; // frame 3, later chunk
        let run = |data: &[f64]| {
            let x = Tensor::from_vec(data.to_vec(), &[4, 3]).unwrap();
            let tape = Tape::inference();
            block.forward(&tape, &x, &allow, None).unwrap().to_vec()
        };
        let a = run(&base);
        let b = run(&bumped);
        assert_eq!(a[..6], b[..6], "first chunk changed by later-chunk frame");
        assert_ne!(a[6..], b[6..]);
    }
}
