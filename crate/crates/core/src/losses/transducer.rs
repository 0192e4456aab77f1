//! Transducer lattice loss.
//!
//! The grid holds per-(frame, emitted-count) log-probabilities over the
//! symbol inventory. Forward/backward tables run entirely in log domain;
//! the loss gradient is the negative edge-occupancy, registered on the tape
//! as one custom operation.

use crate::error::{Error, Result};
use crate::numerics::{lse2, Tape, Tensor};

pub const BLANK: usize = 0;

/// Log-domain forward/backward tables over the `(t, u)` alignment grid.
pub struct TransducerLattice {
    pub frames: usize,
    pub rows: usize, // U + 1
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_likelihood_alpha: f64,
    pub log_likelihood_beta: f64,
}

impl TransducerLattice {
    /// `logp` is `[T, U+1, V]` flattened row-major; `targets` has length `U`
    /// with symbol ids indexing the trailing axis.
    pub fn build(logp: &[f64], frames: usize, vocab: usize, targets: &[usize]) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("transducer_loss: zero frames"));
        }
        let rows = targets.len() + 1;
        if logp.len() != frames * rows * vocab {
            return Err(Error::invalid(format!(
                "transducer_loss: grid of {} values, expected {}x{}x{}",
                logp.len(),
                frames,
                rows,
                vocab
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= vocab) {
            return Err(Error::invalid(format!(
                "transducer_loss: target id {} outside vocabulary {}",
                bad, vocab
            )));
        }
        let at = |t: usize, u: usize, k: usize| logp[(t * rows + u) * vocab + k];
        let idx = |t: usize, u: usize| t * rows + u;

        let mut alpha = vec![f64::NEG_INFINITY; frames * rows];
        alpha[idx(0, 0)] = 0.0;
        for t in 0..frames {
            for u in 0..rows {
                if t == 0 && u == 0 {
                    continue;
                }
                let mut acc = f64::NEG_INFINITY;
                if t > 0 {
                    acc = lse2(acc, alpha[idx(t - 1, u)] + at(t - 1, u, BLANK));
                }
                if u > 0 {
                    acc = lse2(acc, alpha[idx(t, u - 1)] + at(t, u - 1, targets[u - 1]));
                }
                alpha[idx(t, u)] = acc;
            }
        }
        let ll_alpha = alpha[idx(frames - 1, rows - 1)] + at(frames - 1, rows - 1, BLANK);

        let mut beta = vec![f64::NEG_INFINITY; frames * rows];
        beta[idx(frames - 1, rows - 1)] = at(frames - 1, rows - 1, BLANK);
        for t in (0..frames).rev() {
            for u in (0..rows).rev() {
                if t == frames - 1 && u == rows - 1 {
                    continue;
                }
                let mut acc = f64::NEG_INFINITY;
                if t + 1 < frames {
                    acc = lse2(acc, at(t, u, BLANK) + beta[idx(t + 1, u)]);
                }
                if u + 1 < rows {
                    acc = lse2(acc, at(t, u, targets[u]) + beta[idx(t, u + 1)]);
                }
                beta[idx(t, u)] = acc;
            }
        }
        let ll_beta = beta[idx(0, 0)];

        Ok(TransducerLattice {
            frames,
            rows,
            alpha,
            beta,
            log_likelihood_alpha: ll_alpha,
            log_likelihood_beta: ll_beta,
        })
    }

    /// `d(-ll)/d logp`, same layout as the grid.
    fn grad(&self, logp: &[f64], vocab: usize, targets: &[usize]) -> Vec<f64> {
        let rows = self.rows;
        let frames = self.frames;
        let ll = self.log_likelihood_alpha;
        let at = |t: usize, u: usize, k: usize| logp[(t * rows + u) * vocab + k];
        let idx = |t: usize, u: usize| t * rows + u;
        let mut grad = vec![0.0; logp.len()];
        for t in 0..frames {
            for u in 0..rows {
                let a = self.alpha[idx(t, u)];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                // Blank edge: advances time, or terminates at the corner.
                let beta_next = if t + 1 < frames {
                    self.beta[idx(t + 1, u)]
                } else if u == rows - 1 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                };
                if beta_next != f64::NEG_INFINITY {
                    let occ = a + at(t, u, BLANK) + beta_next - ll;
                    grad[(t * rows + u) * vocab + BLANK] -= occ.exp();
                }
                // Label edge: emits the next target symbol.
                if u + 1 < rows {
                    let occ = a + at(t, u, targets[u]) + self.beta[idx(t, u + 1)] - ll;
                    grad[(t * rows + u) * vocab + targets[u]] -= occ.exp();
                }
            }
        }
        grad
    }
}

/// Negative log-likelihood of the target sequence under the grid, summed
/// over the utterance. Gradients flow to the full grid.
pub fn transducer_loss(tape: &Tape, grid: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let shape = grid.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "transducer_loss: grid must be [T, U+1, V], got {:?}",
            shape
        )));
    }
    let (frames, rows, vocab) = (shape[0], shape[1], shape[2]);
    if rows != targets.len() + 1 {
        return Err(Error::invalid(format!(
            "transducer_loss: grid has {} label rows but target length is {}",
            rows,
            targets.len()
        )));
    }
    let logp = grid.to_vec();
    let lattice = TransducerLattice::build(&logp, frames, vocab, targets)?;
    debug_assert!(
        (lattice.log_likelihood_alpha - lattice.log_likelihood_beta).abs() <= 1e-9,
        "alpha/beta disagree: {} vs {}",
        lattice.log_likelihood_alpha,
        lattice.log_likelihood_beta
    );
    let loss = -lattice.log_likelihood_alpha;
    let grad = lattice.grad(&logp, vocab, targets);
    Ok(tape.custom_op(
        &[grid],
        vec![loss],
        &[1],
        Box::new(move |ctx| {
            vec![ctx.need[0].then(|| grad.iter().map(|g| g * ctx.d_out[0]).collect())]
        }),
    ))
}
