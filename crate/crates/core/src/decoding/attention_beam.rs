//! Label-synchronous attention beam search with joint lattice re-ranking.
//!
//! The attention head proposes the top-k next tokens; candidates are scored
//! by `log p_ctc + beta1 * log p_att` where the lattice component is a
//! prefix probability. Ranking without a lattice head (the recurrent
//! attention models) degenerates to pure attention scores.

use crate::data::{BLANK, EOS, SOS};
use crate::error::{Error, Result};
use crate::models::{RnnAttentionEncDec, TransformerAed};
use crate::numerics::{Tape, Tensor};

use super::ctc_prefix::CtcPrefixScorer;

#[derive(Debug, Clone, Copy)]
pub struct JointDecodeConfig {
    /// Attention weight in the combined score.
    pub beta1: f64,
    pub beam: usize,
    /// Candidates proposed by the attention head per hypothesis.
    pub top_k: usize,
    pub max_len: usize,
}

impl JointDecodeConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::invalid("beam size must be >= 1"));
        }
        if self.top_k == 0 || self.top_k > vocab {
            return Err(Error::invalid(format!(
                "top_k {} outside 1..={}",
                self.top_k, vocab
            )));
        }
        Ok(())
    }
}

impl Default for JointDecodeConfig {
    fn default() -> Self {
        JointDecodeConfig {
            beta1: 0.3,
            beam: 8,
            top_k: 8,
            max_len: 40,
        }
    }
}

/// Attention log-probabilities for the next position after a prefix.
pub enum AttentionScorer<'a> {
    RnnAed {
        model: &'a RnnAttentionEncDec,
        enc: Tensor,
        keys: (Tensor, Option<Tensor>),
    },
    Transformer {
        model: &'a TransformerAed,
        enc: Tensor,
    },
}

impl<'a> AttentionScorer<'a> {
    pub fn for_rnn_aed(tape: &Tape, model: &'a RnnAttentionEncDec, feats: &Tensor) -> Result<Self> {
        let enc = model.encoder.forward(tape, feats)?;
        let keys = model.attention_keys(tape, &enc)?;
        Ok(AttentionScorer::RnnAed { model, enc, keys })
    }

    pub fn for_transformer(tape: &Tape, model: &'a TransformerAed, feats: &Tensor) -> Result<Self> {
        let enc = model.encode(tape, feats)?;
        Ok(AttentionScorer::Transformer { model, enc })
    }

    pub fn from_encoded(model: &'a TransformerAed, enc: Tensor) -> Self {
        AttentionScorer::Transformer { model, enc }
    }

    pub fn enc_len(&self) -> usize {
        match self {
            AttentionScorer::RnnAed { enc, .. } => enc.rows(),
            AttentionScorer::Transformer { enc, .. } => enc.rows(),
        }
    }

    pub fn encoder_output(&self) -> &Tensor {
        match self {
            AttentionScorer::RnnAed { enc, .. } => enc,
            AttentionScorer::Transformer { enc, .. } => enc,
        }
    }

    /// Next-token log-probabilities after teacher-forcing `prefix`.
    /// `visible_end` truncates cross-attention for trigger-released decoding
    /// (transformer only).
    pub fn log_probs(&self, tape: &Tape, prefix: &[usize], visible_end: Option<usize>) -> Result<Vec<f64>> {
        match self {
            AttentionScorer::RnnAed { model, enc, keys } => {
                let mut state = model.initial_state(enc.rows());
                let mut row = None;
                for u in 0..=prefix.len() {
                    let token = if u == 0 { SOS } else { prefix[u - 1] };
                    let (logp, next) = model.step(tape, enc, keys, token, &state, None)?;
                    state = next;
                    row = Some(logp);
                }
                Ok(row.expect("at least one step").to_vec())
            }
            AttentionScorer::Transformer { model, enc } => {
                let all = model.decoder_log_probs(tape, enc, prefix, visible_end)?;
                let cols = all.cols();
                let v = all.to_vec();
                Ok(v[(all.rows() - 1) * cols..].to_vec())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankedHypothesis {
    pub tokens: Vec<usize>,
    pub combined: f64,
    pub att_score: f64,
    pub ctc_score: f64,
    /// Frame that released each token (trigger-released decoding only).
    pub trigger_frames: Vec<usize>,
}

fn hyp_order(a: &RankedHypothesis, b: &RankedHypothesis) -> std::cmp::Ordering {
    b.combined
        .partial_cmp(&a.combined)
        .unwrap()
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then(a.tokens.cmp(&b.tokens))
}

struct Live {
    tokens: Vec<usize>,
    att: f64,
    ctc_prefix: f64,
    trigger_frames: Vec<usize>,
}

fn combined(ctc: Option<f64>, att: f64, beta1: f64) -> f64 {
    match ctc {
        Some(c) => c + beta1 * att,
        None => att,
    }
}

/// Top candidate token ids by attention log-probability, excluding control
/// symbols other than the end marker.
fn top_candidates(row: &[f64], top_k: usize, allow_eos: bool) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..row.len())
        .filter(|&k| k != BLANK && k != SOS && (allow_eos || k != EOS))
        .collect();
    ids.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    ids.truncate(top_k);
    ids
}

/// Offline joint beam search over completed utterances. Returns completed
/// hypotheses ranked by combined score.
pub fn attention_beam_decode(
    tape: &Tape,
    scorer: &AttentionScorer,
    ctc: Option<&CtcPrefixScorer>,
    cfg: &JointDecodeConfig,
) -> Result<Vec<RankedHypothesis>> {
    let visible = scorer.enc_len() - 1;
    let mut live = vec![Live {
        tokens: Vec::new(),
        att: 0.0,
        ctc_prefix: 0.0,
        trigger_frames: Vec::new(),
    }];
    let mut completed: Vec<RankedHypothesis> = Vec::new();
    for _ in 0..=cfg.max_len {
        let mut next: Vec<Live> = Vec::new();
        for hyp in &live {
            let row = scorer.log_probs(tape, &hyp.tokens, None)?;
            for c in top_candidates(&row, cfg.top_k, true) {
                let att = hyp.att + row[c];
                if c == EOS {
                    let ctc_score = match ctc {
                        Some(s) => Some(s.score(&hyp.tokens, visible)?.complete),
                        None => None,
                    };
                    completed.push(RankedHypothesis {
                        tokens: hyp.tokens.clone(),
                        combined: combined(ctc_score, att, cfg.beta1),
                        att_score: att,
                        ctc_score: ctc_score.unwrap_or(0.0),
                        trigger_frames: hyp.trigger_frames.clone(),
                    });
                } else if hyp.tokens.len() < cfg.max_len {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(c);
                    let ctc_prefix = match ctc {
                        Some(s) => s.score(&tokens, visible)?.prefix_mass,
                        None => 0.0,
                    };
                    next.push(Live {
                        tokens,
                        att,
                        ctc_prefix,
                        trigger_frames: hyp.trigger_frames.clone(),
                    });
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| {
            let ca = combined(ctc.map(|_| a.ctc_prefix), a.att, cfg.beta1);
            let cb = combined(ctc.map(|_| b.ctc_prefix), b.att, cfg.beta1);
            cb.partial_cmp(&ca)
                .unwrap()
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then(a.tokens.cmp(&b.tokens))
        });
        next.truncate(cfg.beam);
        // Both score components can only fall as a prefix grows, so once the
        // best completed hypothesis beats every live upper bound the search
        // is done.
        if let Some(best_done) = completed.iter().map(|h| h.combined).fold(None, |m: Option<f64>, v| {
            Some(m.map_or(v, |m| m.max(v)))
        }) {
            let best_live = combined(ctc.map(|_| next[0].ctc_prefix), next[0].att, cfg.beta1);
            if best_done >= best_live {
                break;
            }
        }
        live = next;
    }
    if completed.is_empty() {
        // Length cap hit: force-close the survivors.
        for hyp in &live {
            let row = scorer.log_probs(tape, &hyp.tokens, None)?;
            let att = hyp.att + row[EOS];
            let ctc_score = match ctc {
                Some(s) => Some(s.score(&hyp.tokens, visible)?.complete),
                None => None,
            };
            completed.push(RankedHypothesis {
                tokens: hyp.tokens.clone(),
                combined: combined(ctc_score, att, cfg.beta1),
                att_score: att,
                ctc_score: ctc_score.unwrap_or(0.0),
                trigger_frames: hyp.trigger_frames.clone(),
            });
        }
    }
    completed.sort_by(hyp_order);
    completed.truncate(cfg.beam.max(1));
    Ok(completed)
}

/// Trigger-released streaming decode for the transformer model: the lattice
/// head is scanned frame-synchronously, and each new greedy-argmax token
/// event releases one beam step that may only use encoder frames visible at
/// the trigger under the model's mask.
pub fn triggered_attention_decode(
    tape: &Tape,
    model: &TransformerAed,
    feats: &Tensor,
    cfg: &JointDecodeConfig,
) -> Result<Vec<RankedHypothesis>> {
    let enc = model.encode(tape, feats)?;
    let ctc_lp = model.ctc_log_probs(tape, &enc)?;
    let scorer_struct = CtcPrefixScorer::new(&ctc_lp)?;
    let t_len = enc.rows();
    let mask = crate::streaming::AttentionMask::build(model.cfg.mask, t_len)?;
    let att = AttentionScorer::from_encoded(model, enc);
    let (_, trigger_frames) = scorer_struct.greedy_collapse(t_len - 1);

    let mut live = vec![Live {
        tokens: Vec::new(),
        att: 0.0,
        ctc_prefix: 0.0,
        trigger_frames: Vec::new(),
    }];
    for &f in &trigger_frames {
        let visible = mask.visible_end(f);
        let mut next: Vec<Live> = Vec::new();
        for hyp in &live {
            let row = att.log_probs(tape, &hyp.tokens, Some(visible))?;
            for c in top_candidates(&row, cfg.top_k, false) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(c);
                let ctc_prefix = scorer_struct.score(&tokens, visible)?.prefix_mass;
                let mut tf = hyp.trigger_frames.clone();
                tf.push(f);
                next.push(Live {
                    att: hyp.att + row[c],
                    tokens,
                    ctc_prefix,
                    trigger_frames: tf,
                });
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| {
            let ca = a.ctc_prefix + cfg.beta1 * a.att;
            let cb = b.ctc_prefix + cfg.beta1 * b.att;
            cb.partial_cmp(&ca)
                .unwrap()
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then(a.tokens.cmp(&b.tokens))
        });
        next.truncate(cfg.beam);
        live = next;
    }
    // Utterance over: close every survivor with the end marker at full
    // visibility.
    let mut completed = Vec::with_capacity(live.len());
    for hyp in &live {
        let row = att.log_probs(tape, &hyp.tokens, None)?;
        let att_score = hyp.att + row[EOS];
        let ctc_score = scorer_struct.score(&hyp.tokens, t_len - 1)?.complete;
        completed.push(RankedHypothesis {
            tokens: hyp.tokens.clone(),
            combined: ctc_score + cfg.beta1 * att_score,
            att_score,
            ctc_score,
            trigger_frames: hyp.trigger_frames.clone(),
        });
    }
    completed.sort_by(hyp_order);
    Ok(completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{uniform, Parameterized, SeedRng};
    use crate::losses::MultiTaskConfig;
    use crate::models::TransformerAedConfig;
    use crate::streaming::MaskKind;
    use rand::SeedableRng;

    fn tiny_transformer(seed: u64, mask: MaskKind) -> TransformerAed {
        let mut rng = SeedRng::seed_from_u64(seed);
        TransformerAed::new(
            &mut rng,
            TransformerAedConfig {
                vocab_size: 6,
                feat_dim: 3,
                vgg_channels: (2, 2),
                enc_blocks: 1,
                dec_blocks: 1,
                model_dim: 4,
                heads: 1,
                head_dim: 4,
                ff_dim: 6,
                mask,
                multitask: MultiTaskConfig::default(),
            },
        )
        .unwrap()
    }

    #[test]
    fn all_blank_lattice_head_yields_empty_output() {
        let model = tiny_transformer(41, MaskKind::Chunk { chunk_frames: 2 });
        for (name, p) in model.named_params() {
            if name.ends_with("ctc_head.weight") {
                p.set_values(&vec![0.0; p.len()]);
            }
            if name.ends_with("ctc_head.bias") {
                let mut v = vec![0.0; p.len()];
                v[crate::data::BLANK] = 10.0;
                p.set_values(&v);
            }
        }
        let mut rng = SeedRng::seed_from_u64(42);
        let feats = Tensor::from_vec(uniform(&mut rng, 36, 1.0), &[12, 3]).unwrap();
        let tape = Tape::inference();
        let ranked =
            triggered_attention_decode(&tape, &model, &feats, &JointDecodeConfig::default()).unwrap();
        assert_eq!(ranked[0].tokens, Vec::<usize>::new());
        assert!(ranked[0].trigger_frames.is_empty());
    }

    #[test]
    fn trigger_frames_are_monotone_non_decreasing() {
        for seed in [51u64, 52, 53] {
            let model = tiny_transformer(seed, MaskKind::Chunk { chunk_frames: 2 });
            let mut rng = SeedRng::seed_from_u64(seed + 7);
            let feats = Tensor::from_vec(uniform(&mut rng, 48, 1.0), &[16, 3]).unwrap();
            let tape = Tape::inference();
            let ranked =
                triggered_attention_decode(&tape, &model, &feats, &JointDecodeConfig::default())
                    .unwrap();
            for hyp in &ranked {
                assert_eq!(hyp.trigger_frames.len(), hyp.tokens.len());
                for w in hyp.trigger_frames.windows(2) {
                    assert!(w[0] <= w[1], "seed {seed}: {:?}", hyp.trigger_frames);
                }
            }
        }
    }

    #[test]
    fn beta_zero_ranks_by_lattice_score_alone() {
        let model = tiny_transformer(61, MaskKind::Full);
        let mut rng = SeedRng::seed_from_u64(62);
        let feats = Tensor::from_vec(uniform(&mut rng, 36, 1.0), &[12, 3]).unwrap();
        let tape = Tape::inference();
        let enc = model.encode(&tape, &feats).unwrap();
        let ctc_lp = model.ctc_log_probs(&tape, &enc).unwrap();
        let prefix = CtcPrefixScorer::new(&ctc_lp).unwrap();
        let scorer = AttentionScorer::from_encoded(&model, enc.clone());
        let dc = JointDecodeConfig {
            beta1: 0.0,
            beam: 8,
            top_k: 4,
            max_len: 3,
        };
        let ranked = attention_beam_decode(&tape, &scorer, Some(&prefix), &dc).unwrap();
        for pair in ranked.windows(2) {
            assert!(pair[0].ctc_score >= pair[1].ctc_score - 1e-12);
            assert!((pair[0].combined - pair[0].ctc_score).abs() < 1e-12);
        }

        // A very large attention weight converges to the attention-only
        // ranking among the complete hypotheses.
        let dc_big = JointDecodeConfig {
            beta1: 1e6,
            beam: 8,
            top_k: 4,
            max_len: 3,
        };
        let ranked = attention_beam_decode(&tape, &scorer, Some(&prefix), &dc_big).unwrap();
        for pair in ranked.windows(2) {
            assert!(pair[0].att_score >= pair[1].att_score - 1e-12);
        }
    }
}
