//! Hard monotonic chunkwise decoding for the streaming recurrent
//! attention model.

use crate::data::{BLANK, EOS, SOS};
use crate::error::{Error, Result};
use crate::models::{mocha_hard_attend, AedDecodeState, RnnAttentionEncDec};
use crate::numerics::{Tape, Tensor};

pub struct MochaDecodeResult {
    pub tokens: Vec<usize>,
    pub score: f64,
    /// Boundary frame selected for each emitted token.
    pub boundaries: Vec<usize>,
}

struct Hyp {
    tokens: Vec<usize>,
    score: f64,
    boundaries: Vec<usize>,
    state: AedDecodeState,
    done: bool,
}

/// Beam decode with thresholded selection: scanning resumes from each
/// hypothesis's previous boundary, so boundaries never move backwards. A
/// step that fails to trigger ends the hypothesis.
pub fn mocha_hard_decode(
    model: &RnnAttentionEncDec,
    feats: &Tensor,
    beam: usize,
    max_len: usize,
) -> Result<MochaDecodeResult> {
    let mocha = model
        .mocha()
        .ok_or_else(|| Error::invalid("mocha_hard_decode needs a monotonic-attention model"))?;
    if beam == 0 {
        return Err(Error::invalid("beam size must be >= 1"));
    }
    let tape = Tape::inference();
    let enc = model.encoder.forward(&tape, feats)?;
    let (sel_keys, chunk_keys) = {
        let (s, c) = model.attention_keys(&tape, &enc)?;
        (s, c.expect("mocha has chunk keys"))
    };
    let mut hyps = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        boundaries: Vec::new(),
        state: model.initial_state(enc.rows()),
        done: false,
    }];
    for _ in 0..=max_len {
        if hyps.iter().all(|h| h.done) {
            break;
        }
        let mut next: Vec<Hyp> = Vec::new();
        for hyp in hyps {
            if hyp.done {
                next.push(hyp);
                continue;
            }
            let sel = mocha
                .select_energies(&tape, &sel_keys, &hyp.state.query, None)?
                .to_vec();
            let chunk = mocha.chunk_energies(&tape, &chunk_keys, &hyp.state.query)?;
            let attended =
                mocha_hard_attend(&tape, &enc, &sel, &chunk, hyp.state.boundary, mocha.window)?;
            let Some((context, boundary)) = attended else {
                // No trigger before the end of the utterance: the stream is
                // exhausted for this hypothesis.
                next.push(Hyp { done: true, ..hyp });
                continue;
            };
            let token = *hyp.tokens.last().unwrap_or(&SOS);
            let (logp, mut state) = model.step_with_context(&tape, token, &context, &hyp.state)?;
            state.boundary = boundary;
            let row = logp.to_vec();
            if hyp.tokens.len() >= max_len {
                // Length cap: close with the end marker.
                next.push(Hyp {
                    score: hyp.score + row[EOS],
                    done: true,
                    state,
                    ..hyp
                });
                continue;
            }
            let mut ids: Vec<usize> = (0..row.len()).filter(|&k| k != BLANK && k != SOS).collect();
            ids.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            for &c in ids.iter().take(beam) {
                if c == EOS {
                    next.push(Hyp {
                        tokens: hyp.tokens.clone(),
                        score: hyp.score + row[c],
                        boundaries: hyp.boundaries.clone(),
                        state: AedDecodeState {
                            lstm: state.lstm.clone(),
                            query: state.query.clone(),
                            align: state.align.clone(),
                            boundary,
                        },
                        done: true,
                    });
                } else {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(c);
                    let mut boundaries = hyp.boundaries.clone();
                    boundaries.push(boundary);
                    next.push(Hyp {
                        tokens,
                        score: hyp.score + row[c],
                        boundaries,
                        state: AedDecodeState {
                            lstm: state.lstm.clone(),
                            query: state.query.clone(),
                            align: state.align.clone(),
                            boundary,
                        },
                        done: false,
                    });
                }
            }
        }
        next.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.tokens.len().cmp(&b.tokens.len()))
                .then(a.tokens.cmp(&b.tokens))
        });
        next.truncate(beam);
        hyps = next;
    }
    let best = hyps
        .into_iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        .expect("at least one hypothesis survives");
    Ok(MochaDecodeResult {
        tokens: best.tokens,
        score: best.score,
        boundaries: best.boundaries,
    })
}
