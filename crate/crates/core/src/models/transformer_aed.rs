//! Transformer attention encoder-decoder with a shared-encoder lattice head
//! for multi-task training and joint decoding.
//!
//! The convolutional frontend provides order sensitivity; there are no
//! position embeddings anywhere. Decoder self-attention is strictly causal
//! over emitted tokens.

use crate::data::{EOS, SOS};
use crate::error::{Error, Result};
use crate::layers::*;
use crate::losses::{ctc_loss, multitask_loss, MultiTaskConfig};
use crate::models::encoder::{TransformerEncoder, TransformerEncoderConfig};
use crate::numerics::{Tape, Tensor};
use crate::streaming::MaskKind;

#[derive(Debug, Clone)]
pub struct TransformerAedConfig {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub vgg_channels: (usize, usize),
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub mask: MaskKind,
    pub multitask: MultiTaskConfig,
}

pub struct TransformerAed {
    pub cfg: TransformerAedConfig,
    pub frontend: VggFrontend,
    pub encoder: TransformerEncoder,
    ctc_head: Linear,
    dec_embed: Embedding,
    dec_blocks: Vec<TransformerBlock>,
    dec_final_ln: LayerNorm,
    out: Linear,
}

impl TransformerAed {
    pub fn new(rng: &mut SeedRng, cfg: TransformerAedConfig) -> Result<Self> {
        let frontend = VggFrontend::new(rng, cfg.feat_dim, cfg.vgg_channels.0, cfg.vgg_channels.1);
        let encoder = TransformerEncoder::new(
            rng,
            TransformerEncoderConfig {
                input_dim: frontend.output_dim(),
                blocks: cfg.enc_blocks,
                model_dim: cfg.model_dim,
                heads: cfg.heads,
                head_dim: cfg.head_dim,
                ff_dim: cfg.ff_dim,
                mask: cfg.mask,
            },
        );
        let ctc_head = Linear::new(rng, cfg.model_dim, cfg.vocab_size, true);
        let dec_embed = Embedding::new(rng, cfg.vocab_size, cfg.model_dim);
        let dec_blocks = (0..cfg.dec_blocks)
            .map(|_| TransformerBlock::decoder(rng, cfg.model_dim, cfg.heads, cfg.head_dim, cfg.ff_dim))
            .collect();
        let out = Linear::new(rng, cfg.model_dim, cfg.vocab_size, true);
        Ok(TransformerAed {
            dec_final_ln: LayerNorm::new(cfg.model_dim),
            cfg,
            frontend,
            encoder,
            ctc_head,
            dec_embed,
            dec_blocks,
            out,
        })
    }

    /// Frontend plus masked encoder stack: `[T, feat] -> [ceil(T/4), dm]`.
    pub fn encode(&self, tape: &Tape, feats: &Tensor) -> Result<Tensor> {
        let sub = self.frontend.forward(tape, feats)?;
        self.encoder.forward(tape, &sub)
    }

    pub fn encode_masked(&self, tape: &Tape, feats: &Tensor, mask: MaskKind) -> Result<Tensor> {
        let sub = self.frontend.forward(tape, feats)?;
        self.encoder.forward_masked(tape, &sub, mask)
    }

    /// Per-frame log-probabilities of the lattice head.
    pub fn ctc_log_probs(&self, tape: &Tape, enc: &Tensor) -> Result<Tensor> {
        tape.log_softmax(&self.ctc_head.forward(tape, enc)?)
    }

    /// Log-probabilities for each position of `[start] + prefix`, causally
    /// masked; cross-attention optionally truncated to encoder frames
    /// `0..=visible_end`.
    pub fn decoder_log_probs(
        &self,
        tape: &Tape,
        enc: &Tensor,
        prefix: &[usize],
        visible_end: Option<usize>,
    ) -> Result<Tensor> {
        let len = prefix.len() + 1;
        let t_len = enc.rows();
        let mut rows = Vec::with_capacity(len);
        rows.push(self.dec_embed.lookup(tape, SOS)?);
        for &tok in prefix {
            if tok >= self.cfg.vocab_size {
                return Err(Error::invalid(format!("token id {tok} out of range")));
            }
            rows.push(self.dec_embed.lookup(tape, tok)?);
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        let mut h = tape.concat_rows(&refs)?;
        let mut self_allow = vec![false; len * len];
        for q in 0..len {
            for k in 0..=q {
                self_allow[q * len + k] = true;
            }
        }
        let end = visible_end.unwrap_or(t_len - 1).min(t_len - 1);
        let mut cross_allow = vec![false; len * t_len];
        for q in 0..len {
            for k in 0..=end {
                cross_allow[q * t_len + k] = true;
            }
        }
        for block in &self.dec_blocks {
            h = block.forward(tape, &h, &self_allow, Some((enc, &cross_allow)))?;
        }
        let h = self.dec_final_ln.forward(tape, &h)?;
        tape.log_softmax(&self.out.forward(tape, &h)?)
    }

    /// Teacher-forced attention log-probabilities `[U+1, vocab]` alongside
    /// the lattice head's `[T', vocab]`.
    pub fn forward_teacher(
        &self,
        tape: &Tape,
        feats: &Tensor,
        targets: &[usize],
    ) -> Result<(Tensor, Tensor)> {
        let enc = self.encode(tape, feats)?;
        let att = self.decoder_log_probs(tape, &enc, targets, None)?;
        let ctc = self.ctc_log_probs(tape, &enc)?;
        Ok((att, ctc))
    }

    /// Multi-task objective over both heads.
    pub fn loss(&self, tape: &Tape, feats: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let (att, ctc) = self.forward_teacher(tape, feats, targets)?;
        let mut ids: Vec<usize> = targets.to_vec();
        ids.push(EOS);
        let att_ll = tape.sum_all(&tape.gather_rows(&att, &ids)?)?;
        let ctc_nll = ctc_loss(tape, &ctc, targets)?;
        let ctc_ll = tape.scale(&ctc_nll, -1.0)?;
        multitask_loss(tape, &ctc_ll, &att_ll, self.cfg.multitask)
    }
}

impl Parameterized for TransformerAed {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.frontend.collect_params(&p("frontend"), out);
        self.encoder.collect_params(&p("encoder"), out);
        self.ctc_head.collect_params(&p("ctc_head"), out);
        self.dec_embed.collect_params(&p("dec.embed"), out);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.collect_params(&p(&format!("dec.block{i}")), out);
        }
        self.dec_final_ln.collect_params(&p("dec.final_ln"), out);
        self.out.collect_params(&p("dec.out"), out);
    }
}
