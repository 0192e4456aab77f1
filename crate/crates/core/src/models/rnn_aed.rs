//! Recurrent attention encoder-decoder.
//!
//! The decoder LSTM consumes the previous token's embedding together with a
//! context vector — a weighted combination of encoder outputs. Non-streaming
//! models use location-aware soft attention (the previous step's alignment
//! feeds a small convolution whose features enter the energies); streaming
//! models use monotonic chunkwise attention.

use crate::data::{EOS, SOS};
use crate::error::{Error, Result};
use crate::layers::*;
use crate::models::encoder::{RnnEncoder, RnnEncoderConfig};
use crate::models::mocha::MochaAttention;
use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone)]
pub enum AedAttentionKind {
    SoftLocation,
    Mocha {
        window: usize,
        noise_std: f64,
        /// Weight of the training-time penalty on lost boundary mass.
        /// Expected monotonic attention can silently drive every selection
        /// probability to zero (the decoder then runs as a pure language
        /// model and the encoder stops receiving gradient); anchoring the
        /// per-step mass toward one keeps the attention path alive.
        mass_anchor: f64,
    },
}

#[derive(Debug, Clone)]
pub struct RnnAedConfig {
    pub vocab_size: usize,
    pub encoder: RnnEncoderConfig,
    pub embed_dim: usize,
    pub dec_blocks: usize,
    pub dec_cell: usize,
    pub dec_proj: usize,
    pub att_dim: usize,
    pub loc_kernel: usize,
    pub loc_filters: usize,
    pub attention: AedAttentionKind,
}

/// Soft attention whose energies also see the previous step's alignment
/// through a 1-D convolution.
struct SoftLocationAttention {
    query_proj: Linear,
    key_proj: Linear,
    loc_conv_w: Tensor,
    loc_conv_b: Tensor,
    loc_proj: Linear,
    score: Tensor,
}

impl SoftLocationAttention {
    fn new(rng: &mut SeedRng, enc_dim: usize, query_dim: usize, cfg: &RnnAedConfig) -> Self {
        let scale = 1.0 / (cfg.att_dim as f64).sqrt();
        SoftLocationAttention {
            query_proj: Linear::new(rng, query_dim, cfg.att_dim, false),
            key_proj: Linear::new(rng, enc_dim, cfg.att_dim, true),
            loc_conv_w: Tensor::param(
                uniform(rng, cfg.loc_filters * cfg.loc_kernel, 0.3),
                &[cfg.loc_filters, cfg.loc_kernel],
            )
            .unwrap(),
            loc_conv_b: zeros_param(&[cfg.loc_filters]),
            loc_proj: Linear::new(rng, cfg.loc_filters, cfg.att_dim, false),
            score: Tensor::param(uniform(rng, cfg.att_dim, scale), &[cfg.att_dim]).unwrap(),
        }
    }

    fn keys(&self, tape: &Tape, enc: &Tensor) -> Result<Tensor> {
        self.key_proj.forward(tape, enc)
    }

    /// Energies given the previous alignment; exposed for the location probe.
    fn energies(&self, tape: &Tape, keys: &Tensor, query: &Tensor, prev_align: &Tensor) -> Result<Tensor> {
        let f = tape.conv1d_same(prev_align, &self.loc_conv_w, &self.loc_conv_b)?;
        let fp = self.loc_proj.forward(tape, &f)?;
        let qp = self.query_proj.forward_vec(tape, query)?;
        let e = tape.tanh(&tape.add_row_bias(&tape.add(keys, &fp)?, &qp)?)?;
        let v = tape.reshape(&self.score, &[self.score.len(), 1])?;
        tape.reshape(&tape.matmul(&e, &v)?, &[keys.rows()])
    }

    fn attend(
        &self,
        tape: &Tape,
        enc: &Tensor,
        keys: &Tensor,
        query: &Tensor,
        prev_align: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let scores = self.energies(tape, keys, query, prev_align)?;
        let align = tape.softmax(&scores)?;
        let row = tape.reshape(&align, &[1, enc.rows()])?;
        let context = tape.reshape(&tape.matmul(&row, enc)?, &[enc.cols()])?;
        Ok((context, align))
    }
}

impl Parameterized for SoftLocationAttention {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.query_proj.collect_params(&format!("{prefix}.query"), out);
        self.key_proj.collect_params(&format!("{prefix}.key"), out);
        push_param(out, prefix, "loc_conv.weight", &self.loc_conv_w);
        push_param(out, prefix, "loc_conv.bias", &self.loc_conv_b);
        self.loc_proj.collect_params(&format!("{prefix}.loc"), out);
        push_param(out, prefix, "score", &self.score);
    }
}

enum AttentionImpl {
    Soft(SoftLocationAttention),
    Mocha(MochaAttention),
}

pub struct RnnAttentionEncDec {
    pub cfg: RnnAedConfig,
    pub encoder: RnnEncoder,
    embed: Embedding,
    dec_blocks: Vec<LstmBlockStandard>,
    attention: AttentionImpl,
    out: Linear,
}

/// Decoder-side state carried across output steps.
pub struct AedDecodeState {
    pub lstm: Vec<LstmState>,
    /// Last decoder block output, the attention query for the next step.
    pub query: Tensor,
    /// Previous soft alignment (soft attention) or boundary distribution
    /// (expected monotonic attention).
    pub align: Tensor,
    /// Previous hard boundary (hard monotonic decoding).
    pub boundary: usize,
}

impl RnnAttentionEncDec {
    pub fn new(rng: &mut SeedRng, cfg: RnnAedConfig) -> Result<Self> {
        let encoder = RnnEncoder::new(rng, cfg.encoder.clone())?;
        if matches!(cfg.attention, AedAttentionKind::Mocha { .. }) && !encoder.is_streaming() {
            return Err(Error::Config(
                "monotonic attention is for streaming encoders".into(),
            ));
        }
        let enc_dim = encoder.output_size();
        let attention = match cfg.attention {
            AedAttentionKind::SoftLocation => {
                AttentionImpl::Soft(SoftLocationAttention::new(rng, enc_dim, cfg.dec_proj, &cfg))
            }
            AedAttentionKind::Mocha {
                window, noise_std, ..
            } => AttentionImpl::Mocha(MochaAttention::new(
                rng,
                enc_dim,
                cfg.dec_proj,
                cfg.att_dim,
                window,
                noise_std,
            )),
        };
        let embed = Embedding::new(rng, cfg.vocab_size, cfg.embed_dim);
        let mut dec_blocks = Vec::with_capacity(cfg.dec_blocks);
        for i in 0..cfg.dec_blocks {
            let input = if i == 0 {
                cfg.embed_dim + enc_dim
            } else {
                cfg.dec_proj
            };
            dec_blocks.push(LstmBlockStandard::new(rng, input, cfg.dec_cell, cfg.dec_proj));
        }
        let out = Linear::new(rng, cfg.dec_proj + enc_dim, cfg.vocab_size, true);
        Ok(RnnAttentionEncDec {
            cfg,
            encoder,
            embed,
            dec_blocks,
            attention,
            out,
        })
    }

    pub fn is_mocha(&self) -> bool {
        matches!(self.attention, AttentionImpl::Mocha(_))
    }

    pub fn mocha(&self) -> Option<&MochaAttention> {
        match &self.attention {
            AttentionImpl::Mocha(m) => Some(m),
            AttentionImpl::Soft(_) => None,
        }
    }

    pub fn initial_state(&self, t_len: usize) -> AedDecodeState {
        let align = match &self.attention {
            // Uniform starting alignment for the location features.
            AttentionImpl::Soft(_) => {
                Tensor::from_vec(vec![1.0 / t_len as f64; t_len], &[t_len]).unwrap()
            }
            // The monotonic scan starts at the first frame.
            AttentionImpl::Mocha(_) => {
                let mut v = vec![0.0; t_len];
                v[0] = 1.0;
                Tensor::from_vec(v, &[t_len]).unwrap()
            }
        };
        AedDecodeState {
            lstm: self.dec_blocks.iter().map(|b| b.zero_state()).collect(),
            query: Tensor::zeros(&[self.cfg.dec_proj]),
            align,
            boundary: 0,
        }
    }

    /// Precomputed per-utterance attention keys.
    pub fn attention_keys(&self, tape: &Tape, enc: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        match &self.attention {
            AttentionImpl::Soft(soft) => Ok((soft.keys(tape, enc)?, None)),
            AttentionImpl::Mocha(m) => {
                let (sel, chunk) = m.keys(tape, enc)?;
                Ok((sel, Some(chunk)))
            }
        }
    }

    /// One decoder step under training-time (expected) attention.
    pub fn step(
        &self,
        tape: &Tape,
        enc: &Tensor,
        keys: &(Tensor, Option<Tensor>),
        token: usize,
        state: &AedDecodeState,
        noise: Option<&[f64]>,
    ) -> Result<(Tensor, AedDecodeState)> {
        let (context, align) = match &self.attention {
            AttentionImpl::Soft(soft) => {
                soft.attend(tape, enc, &keys.0, &state.query, &state.align)?
            }
            AttentionImpl::Mocha(m) => {
                let pair = (keys.0.clone(), keys.1.clone().expect("chunk keys"));
                m.expected(tape, enc, &pair, &state.query, &state.align, noise)?
            }
        };
        let (logp, mut next) = self.step_with_context(tape, token, &context, state)?;
        next.align = align;
        Ok((logp, next))
    }

    /// Decoder step with an externally supplied context vector (hard
    /// monotonic decoding computes its own).
    pub fn step_with_context(
        &self,
        tape: &Tape,
        token: usize,
        context: &Tensor,
        state: &AedDecodeState,
    ) -> Result<(Tensor, AedDecodeState)> {
        let emb = self.embed.lookup(tape, token)?;
        let mut x = tape.concat_cols(&[&emb, context])?;
        let mut lstm_next = Vec::with_capacity(self.dec_blocks.len());
        for (block, st) in self.dec_blocks.iter().zip(&state.lstm) {
            let (out, ns) = block.step(tape, &x, st)?;
            lstm_next.push(ns);
            x = out;
        }
        let logits = self
            .out
            .forward_vec(tape, &tape.concat_cols(&[&x, context])?)?;
        let logp = tape.log_softmax(&logits)?;
        Ok((
            logp,
            AedDecodeState {
                lstm: lstm_next,
                query: x,
                align: state.align.clone(),
                boundary: state.boundary,
            },
        ))
    }

    /// Teacher-forced per-step log-probabilities, `[U+1, vocab]`; the final
    /// row is the end-of-sequence step. Also returns the per-step attention
    /// weights `[U+1, T]`.
    pub fn forward_teacher(
        &self,
        tape: &Tape,
        feats: &Tensor,
        targets: &[usize],
        mut noise_rng: Option<&mut SeedRng>,
    ) -> Result<(Tensor, Tensor)> {
        let enc = self.encoder.forward(tape, feats)?;
        let keys = self.attention_keys(tape, &enc)?;
        let t_len = enc.rows();
        let mut state = self.initial_state(t_len);
        let mut rows = Vec::with_capacity(targets.len() + 1);
        let mut aligns = Vec::with_capacity(targets.len() + 1);
        for u in 0..=targets.len() {
            let token = if u == 0 { SOS } else { targets[u - 1] };
            let noise = noise_rng.as_deref_mut().map(|rng| {
                (0..t_len)
                    .map(|_| gaussian_sample(rng) * self.noise_std())
                    .collect::<Vec<f64>>()
            });
            let (logp, next) = self.step(tape, &enc, &keys, token, &state, noise.as_deref())?;
            rows.push(logp);
            aligns.push(next.align.clone());
            state = next;
        }
        let row_refs: Vec<&Tensor> = rows.iter().collect();
        let align_refs: Vec<&Tensor> = aligns.iter().collect();
        Ok((tape.concat_rows(&row_refs)?, tape.concat_rows(&align_refs)?))
    }

    fn noise_std(&self) -> f64 {
        match &self.attention {
            AttentionImpl::Mocha(m) => m.noise_std,
            AttentionImpl::Soft(_) => 0.0,
        }
    }

    /// Negative log-likelihood of `targets` plus the end-of-sequence step.
    /// Monotonic attention adds the configured mass-anchor penalty.
    pub fn teacher_loss(
        &self,
        tape: &Tape,
        feats: &Tensor,
        targets: &[usize],
        noise_rng: Option<&mut SeedRng>,
    ) -> Result<Tensor> {
        let (logp, aligns) = self.forward_teacher(tape, feats, targets, noise_rng)?;
        let mut ids: Vec<usize> = targets.to_vec();
        ids.push(EOS);
        let picked = tape.gather_rows(&logp, &ids)?;
        let mut loss = tape.scale(&tape.sum_all(&picked)?, -1.0)?;
        if let AedAttentionKind::Mocha { mass_anchor, .. } = self.cfg.attention {
            if mass_anchor > 0.0 {
                let one = Tensor::scalar(1.0);
                let mut aux = Tensor::scalar(0.0);
                for u in 0..aligns.rows() {
                    let row = tape.row(&aligns, u)?;
                    let lost = tape.sub(&one, &tape.sum_all(&row)?)?;
                    aux = tape.add(&aux, &tape.mul(&lost, &lost)?)?;
                }
                loss = tape.add(&loss, &tape.scale(&aux, mass_anchor)?)?;
            }
        }
        Ok(loss)
    }
}

pub(crate) fn gaussian_sample(rng: &mut SeedRng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl Parameterized for RnnAttentionEncDec {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.encoder.collect_params(&p("encoder"), out);
        self.embed.collect_params(&p("embed"), out);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            b.collect_params(&p(&format!("dec.block{i}")), out);
        }
        match &self.attention {
            AttentionImpl::Soft(s) => s.collect_params(&p("attention"), out),
            AttentionImpl::Mocha(m) => m.collect_params(&p("attention"), out),
        }
        self.out.collect_params(&p("out"), out);
    }
}
