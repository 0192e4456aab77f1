//! Evaluation: family-specific decoding, word error rate and token
//! accuracy.

use crate::data::{Utterance, Vocab, RESERVED};
use crate::decoding::*;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::Tape;

use super::config::ExperimentConfig;
use super::train::model_features;

pub struct UttResult {
    pub id: String,
    pub hyp_text: String,
    pub score: f64,
    pub trigger_frames: Vec<usize>,
}

pub struct EvalOutcome {
    pub wer: WerBreakdown,
    /// 1 - token error rate over payload tokens.
    pub token_accuracy: f64,
    pub per_utt: Vec<UttResult>,
}

fn decode_utterance(
    model: &Model,
    cfg: &ExperimentConfig,
    utt: &Utterance,
) -> Result<(Vec<usize>, f64, Vec<usize>)> {
    let tape = Tape::inference();
    let feats = model_features(cfg, utt)?;
    match model {
        Model::Rnnt(m) => {
            let (tokens, score) = rnnt_beam_decode(m, &feats, cfg.beam, cfg.max_len)?;
            Ok((tokens, score, Vec::new()))
        }
        Model::RnnAed(m) => {
            if m.is_mocha() {
                let out = mocha_hard_decode(m, &feats, cfg.beam, cfg.max_len)?;
                Ok((out.tokens, out.score, out.boundaries))
            } else {
                let scorer = AttentionScorer::for_rnn_aed(&tape, m, &feats)?;
                let dc = JointDecodeConfig {
                    beta1: cfg.beta1,
                    beam: cfg.beam,
                    top_k: cfg.top_k,
                    max_len: cfg.max_len,
                };
                let ranked = attention_beam_decode(&tape, &scorer, None, &dc)?;
                let best = ranked
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::invalid("empty beam result"))?;
                Ok((best.tokens, best.combined, best.trigger_frames))
            }
        }
        Model::TransformerAed(m) => {
            let dc = JointDecodeConfig {
                beta1: cfg.beta1,
                beam: cfg.beam,
                top_k: cfg.top_k,
                max_len: cfg.max_len,
            };
            let ranked = if cfg.streaming {
                triggered_attention_decode(&tape, m, &feats, &dc)?
            } else {
                let enc = m.encode(&tape, &feats)?;
                let ctc_lp = m.ctc_log_probs(&tape, &enc)?;
                let prefix = CtcPrefixScorer::new(&ctc_lp)?;
                let scorer = AttentionScorer::from_encoded(m, enc);
                attention_beam_decode(&tape, &scorer, Some(&prefix), &dc)?
            };
            let best = ranked
                .into_iter()
                .next()
                .ok_or_else(|| Error::invalid("empty beam result"))?;
            Ok((best.tokens, best.combined, best.trigger_frames))
        }
    }
}

pub fn evaluate(
    model: &Model,
    cfg: &ExperimentConfig,
    corpus: &[Utterance],
    vocab: &Vocab,
) -> Result<EvalOutcome> {
    if corpus.is_empty() {
        return Err(Error::invalid("evaluate: empty corpus"));
    }
    let mut wer = WerBreakdown {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        ref_len: 0,
    };
    let mut token_edits = 0usize;
    let mut token_total = 0usize;
    let mut per_utt = Vec::with_capacity(corpus.len());
    for utt in corpus {
        let (tokens, score, trigger_frames) = decode_utterance(model, cfg, utt)?;
        let payload: Vec<usize> = tokens.iter().copied().filter(|&t| t >= RESERVED).collect();
        let hyp_text = vocab.detokenize(&payload)?;
        let hyp_words: Vec<String> = hyp_text.split_whitespace().map(|w| w.to_string()).collect();
        let ref_words: Vec<String> = utt
            .transcript
            .split_whitespace()
            .map(|w| w.to_string())
            .collect();
        wer.accumulate(&word_error_rate(&hyp_words, &ref_words)?);
        let tb = word_error_rate(&payload, &utt.tokens)?;
        token_edits += tb.edits();
        token_total += utt.tokens.len();
        per_utt.push(UttResult {
            id: utt.id.clone(),
            hyp_text,
            score,
            trigger_frames,
        });
    }
    Ok(EvalOutcome {
        wer,
        token_accuracy: 1.0 - token_edits as f64 / token_total as f64,
        per_utt,
    })
}
