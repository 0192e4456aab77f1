//! Frame-synchronous transducer beam search with prefix merging.
//!
//! Hypotheses holding the same label sequence are merged by adding their
//! path probabilities, so with a wide enough beam the per-hypothesis score
//! is the exact alignment marginal.

use std::collections::HashMap;

use crate::data::{BLANK, EOS, SOS};
use crate::error::Result;
use crate::models::{PredState, RnnTransducer};
use crate::numerics::{lse2, Tape, Tensor};

struct Hyp {
    tokens: Vec<usize>,
    log_prob: f64,
    pred_out: Tensor,
    state: PredState,
    emitted_this_frame: usize,
}

fn keep_best(mut hyps: Vec<Hyp>, beam: usize) -> Vec<Hyp> {
    hyps.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap()
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then(a.tokens.cmp(&b.tokens))
    });
    hyps.truncate(beam);
    hyps
}

/// Best label sequence and its merged log-probability.
pub fn rnnt_beam_decode(
    model: &RnnTransducer,
    feats: &Tensor,
    beam: usize,
    max_len: usize,
) -> Result<(Vec<usize>, f64)> {
    // Termination guard: at most this many labels may be emitted without
    // consuming a frame.
    const MAX_SYMBOLS_PER_FRAME: usize = 10;
    let tape = Tape::inference();
    let enc = model.encoder.forward(&tape, feats)?;
    let t_len = enc.rows();
    let (pred0, state0) = model.prediction.step(&tape, SOS, &model.prediction.zero_state())?;
    let mut consumed: Vec<Hyp> = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        pred_out: pred0,
        state: state0,
        emitted_this_frame: 0,
    }];
    for t in 0..t_len {
        let enc_row = tape.row(&enc, t)?;
        let mut frontier = consumed;
        for h in frontier.iter_mut() {
            h.emitted_this_frame = 0;
        }
        let mut finished: HashMap<Vec<usize>, Hyp> = HashMap::new();
        while !frontier.is_empty() {
            let mut expansions: HashMap<Vec<usize>, Hyp> = HashMap::new();
            for hyp in frontier.drain(..) {
                let logits = model.joint.single(&tape, &enc_row, &hyp.pred_out)?;
                let lv = logits.to_vec();
                // Blank consumes the frame.
                let blank_lp = hyp.log_prob + lv[BLANK];
                match finished.entry(hyp.tokens.clone()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        e.get_mut().log_prob = lse2(e.get().log_prob, blank_lp);
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(Hyp {
                            tokens: hyp.tokens.clone(),
                            log_prob: blank_lp,
                            pred_out: hyp.pred_out.clone(),
                            state: PredState(hyp.state.0.clone()),
                            emitted_this_frame: 0,
                        });
                    }
                }
                // Labels stay on the frame.
                if hyp.tokens.len() >= max_len
                    || hyp.emitted_this_frame >= MAX_SYMBOLS_PER_FRAME
                {
                    continue;
                }
                for k in 0..model.cfg.vocab_size {
                    if k == BLANK || k == SOS || k == EOS {
                        continue;
                    }
                    let lp = hyp.log_prob + lv[k];
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(k);
                    match expansions.entry(tokens) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            e.get_mut().log_prob = lse2(e.get().log_prob, lp);
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            let (out, state) = model.prediction.step(&tape, k, &hyp.state)?;
                            let key = e.key().clone();
                            e.insert(Hyp {
                                tokens: key,
                                log_prob: lp,
                                pred_out: out,
                                state,
                                emitted_this_frame: hyp.emitted_this_frame + 1,
                            });
                        }
                    }
                }
            }
            frontier = keep_best(expansions.into_values().collect(), beam);
        }
        consumed = keep_best(finished.into_values().collect(), beam);
    }
    let best = consumed
        .into_iter()
        .next()
        .expect("beam always holds at least one hypothesis");
    Ok((best.tokens, best.log_prob))
}

/// Greedy decoding: follow the argmax symbol at each grid position.
pub fn rnnt_greedy_decode(model: &RnnTransducer, feats: &Tensor, max_len: usize) -> Result<(Vec<usize>, f64)> {
    const MAX_SYMBOLS_PER_FRAME: usize = 10;
    let tape = Tape::inference();
    let enc = model.encoder.forward(&tape, feats)?;
    let (mut pred_out, mut state) =
        model.prediction.step(&tape, SOS, &model.prediction.zero_state())?;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for t in 0..enc.rows() {
        let enc_row = tape.row(&enc, t)?;
        let mut emitted = 0;
        loop {
            let logits = model.joint.single(&tape, &enc_row, &pred_out)?;
            let lv = logits.to_vec();
            let (best, lp) = lv
                .iter()
                .enumerate()
                .filter(|(k, _)| *k == BLANK || (*k != SOS && *k != EOS))
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, v)| (k, *v))
                .unwrap();
            score += lp;
            if best == BLANK || tokens.len() >= max_len || emitted >= MAX_SYMBOLS_PER_FRAME {
                if best != BLANK {
                    score -= lp;
                    score += lv[BLANK];
                }
                break;
            }
            tokens.push(best);
            emitted += 1;
            let (out, next) = model.prediction.step(&tape, best, &state)?;
            pred_out = out;
            state = next;
        }
    }
    Ok((tokens, score))
}
