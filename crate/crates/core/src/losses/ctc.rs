//! CTC lattice loss over the blank-expanded label sequence.

use crate::error::{Error, Result};
use crate::numerics::{lse2, Tape, Tensor};

pub const BLANK: usize = 0;

/// Log-domain forward/backward tables over `(frame, expanded-position)`.
pub struct CtcLattice {
    pub frames: usize,
    /// Blank-interleaved target: `[b, y1, b, y2, ..., yU, b]`.
    pub expanded: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_likelihood_alpha: f64,
    pub log_likelihood_beta: f64,
}

fn expand(targets: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * targets.len() + 1);
    out.push(BLANK);
    for &y in targets {
        out.push(y);
        out.push(BLANK);
    }
    out
}

/// Minimum frame count: one per label plus one per adjacent repeat.
fn min_frames(targets: &[usize]) -> usize {
    let repeats = targets.windows(2).filter(|w| w[0] == w[1]).count();
    targets.len() + repeats
}

impl CtcLattice {
    /// `logp` is `[frames, vocab]` of per-frame log-probabilities.
    pub fn build(logp: &[f64], frames: usize, vocab: usize, targets: &[usize]) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("ctc_loss: zero frames"));
        }
        if logp.len() != frames * vocab {
            return Err(Error::invalid(format!(
                "ctc_loss: {} values for a {}x{} grid",
                logp.len(),
                frames,
                vocab
            )));
        }
        if targets.iter().any(|&y| y == BLANK || y >= vocab) {
            return Err(Error::invalid(
                "ctc_loss: target contains blank or out-of-vocabulary id",
            ));
        }
        if frames < min_frames(targets) {
            return Err(Error::TargetUnreachable(format!(
                "{} labels (with repeats) need at least {} frames, have {}",
                targets.len(),
                min_frames(targets),
                frames
            )));
        }
        let expanded = expand(targets);
        let s_len = expanded.len();
        let at = |t: usize, k: usize| logp[t * vocab + k];
        let idx = |t: usize, s: usize| t * s_len + s;
        // Skipping from s-2 to s is legal when s holds a label differing
        // from the label two slots back.
        let can_skip = |s: usize| s >= 2 && expanded[s] != BLANK && expanded[s] != expanded[s - 2];

        let mut alpha = vec![f64::NEG_INFINITY; frames * s_len];
        alpha[idx(0, 0)] = at(0, expanded[0]);
        if s_len > 1 {
            alpha[idx(0, 1)] = at(0, expanded[1]);
        }
        for t in 1..frames {
            for s in 0..s_len {
                let mut acc = alpha[idx(t - 1, s)];
                if s >= 1 {
                    acc = lse2(acc, alpha[idx(t - 1, s - 1)]);
                }
                if can_skip(s) {
                    acc = lse2(acc, alpha[idx(t - 1, s - 2)]);
                }
                alpha[idx(t, s)] = acc + at(t, expanded[s]);
            }
        }
        let mut ll_alpha = alpha[idx(frames - 1, s_len - 1)];
        if s_len > 1 {
            ll_alpha = lse2(ll_alpha, alpha[idx(frames - 1, s_len - 2)]);
        }

        let mut beta = vec![f64::NEG_INFINITY; frames * s_len];
        beta[idx(frames - 1, s_len - 1)] = at(frames - 1, expanded[s_len - 1]);
        if s_len > 1 {
            beta[idx(frames - 1, s_len - 2)] = at(frames - 1, expanded[s_len - 2]);
        }
        for t in (0..frames - 1).rev() {
            for s in 0..s_len {
                let mut acc = beta[idx(t + 1, s)];
                if s + 1 < s_len {
                    acc = lse2(acc, beta[idx(t + 1, s + 1)]);
                }
                if s + 2 < s_len && can_skip(s + 2) {
                    acc = lse2(acc, beta[idx(t + 1, s + 2)]);
                }
                beta[idx(t, s)] = acc + at(t, expanded[s]);
            }
        }
        let mut ll_beta = beta[idx(0, 0)];
        if s_len > 1 {
            ll_beta = lse2(ll_beta, beta[idx(0, 1)]);
        }

        Ok(CtcLattice {
            frames,
            expanded,
            alpha,
            beta,
            log_likelihood_alpha: ll_alpha,
            log_likelihood_beta: ll_beta,
        })
    }

    /// `d(-ll)/d logp`, `[frames, vocab]`.
    fn grad(&self, logp: &[f64], vocab: usize) -> Vec<f64> {
        let s_len = self.expanded.len();
        let ll = self.log_likelihood_alpha;
        let mut grad = vec![0.0; logp.len()];
        for t in 0..self.frames {
            for s in 0..s_len {
                let a = self.alpha[t * s_len + s];
                let b = self.beta[t * s_len + s];
                if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                    continue;
                }
                let k = self.expanded[s];
                // Alpha and beta both include the emission at (t, s).
                let occ = a + b - logp[t * vocab + k] - ll;
                grad[t * vocab + k] -= occ.exp();
            }
        }
        grad
    }
}

/// Negative log-likelihood of the label sequence summed over all
/// frame alignments. Gradients flow to `log_probs`.
pub fn ctc_loss(tape: &Tape, log_probs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let shape = log_probs.shape();
    if shape.len() != 2 {
        return Err(Error::invalid(format!(
            "ctc_loss: log_probs must be [T, V], got {:?}",
            shape
        )));
    }
    let (frames, vocab) = (shape[0], shape[1]);
    let logp = log_probs.to_vec();
    let lattice = CtcLattice::build(&logp, frames, vocab, targets)?;
    debug_assert!(
        (lattice.log_likelihood_alpha - lattice.log_likelihood_beta).abs() <= 1e-9,
        "alpha/beta disagree: {} vs {}",
        lattice.log_likelihood_alpha,
        lattice.log_likelihood_beta
    );
    let loss = -lattice.log_likelihood_alpha;
    let grad = lattice.grad(&logp, vocab);
    Ok(tape.custom_op(
        &[log_probs],
        vec![loss],
        &[1],
        Box::new(move |ctx| {
            vec![ctx.need[0].then(|| grad.iter().map(|g| g * ctx.d_out[0]).collect())]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use crate::oracles;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_logp(rng: &mut StdRng, frames: usize, vocab: usize) -> Vec<f64> {
        let mut out = vec![0.0; frames * vocab];
        for t in 0..frames {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + raw.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for k in 0..vocab {
                out[t * vocab + k] = raw[k] - lse;
            }
        }
        out
    }

    #[test]
    fn single_frame_single_label() {
        let mut rng = StdRng::seed_from_u64(41);
        let logp = random_logp(&mut rng, 1, 4);
        let tape = Tape::new();
        let t = Tensor::from_vec(logp.clone(), &[1, 4]).unwrap();
        let loss = ctc_loss(&tape, &t, &[2]).unwrap().item();
        assert!((loss + logp[2]).abs() < 1e-12);
    }

    #[test]
    fn two_frames_single_label_three_alignments() {
        let mut rng = StdRng::seed_from_u64(42);
        let logp = random_logp(&mut rng, 2, 3);
        let a = 1usize;
        let p = |t: usize, k: usize| logp[t * 3 + k];
        let expect = -(lse2(
            lse2(p(0, a) + p(1, BLANK), p(0, BLANK) + p(1, a)),
            p(0, a) + p(1, a),
        ));
        let tape = Tape::new();
        let t = Tensor::from_vec(logp.clone(), &[2, 3]).unwrap();
        let loss = ctc_loss(&tape, &t, &[a]).unwrap().item();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_all_blanks() {
        let mut rng = StdRng::seed_from_u64(43);
        let logp = random_logp(&mut rng, 5, 3);
        let tape = Tape::new();
        let t = Tensor::from_vec(logp.clone(), &[5, 3]).unwrap();
        let loss = ctc_loss(&tape, &t, &[]).unwrap().item();
        let expect: f64 = -(0..5).map(|t| logp[t * 3 + BLANK]).sum::<f64>();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_is_an_error() {
        let mut rng = StdRng::seed_from_u64(44);
        let logp = random_logp(&mut rng, 2, 3);
        let tape = Tape::new();
        let t = Tensor::from_vec(logp, &[2, 3]).unwrap();
        // Repeat needs a separating blank: minimum 3 frames.
        let err = ctc_loss(&tape, &t, &[1, 1]).unwrap_err();
        assert!(matches!(err, Error::TargetUnreachable(_)));
    }

    #[test]
    fn matches_exhaustive_string_enumeration() {
        let mut rng = StdRng::seed_from_u64(45);
        for _ in 0..40 {
            let frames = rng.gen_range(1..=6);
            let vocab = rng.gen_range(2..=4);
            let labels = rng.gen_range(0..=3usize);
            let targets: Vec<usize> = (0..labels).map(|_| rng.gen_range(1..vocab)).collect();
            if frames < targets.len() + targets.windows(2).filter(|w| w[0] == w[1]).count() {
                continue;
            }
            let logp = random_logp(&mut rng, frames, vocab);
            let tape = Tape::new();
            let t = Tensor::from_vec(logp.clone(), &[frames, vocab]).unwrap();
            let loss = ctc_loss(&tape, &t, &targets).unwrap().item();
            let oracle = -oracles::ctc_path_sum(&logp, frames, vocab, &targets, BLANK);
            assert!(
                (loss - oracle).abs() <= 1e-8,
                "T={frames} y={targets:?}: {loss} vs {oracle}"
            );
        }
    }

    #[test]
    fn alpha_and_beta_terminations_agree() {
        let mut rng = StdRng::seed_from_u64(46);
        for _ in 0..20 {
            let frames = rng.gen_range(2..=7);
            let labels = rng.gen_range(0..=3usize);
            let targets: Vec<usize> = (0..labels).map(|_| rng.gen_range(1..4)).collect();
            if frames < targets.len() + targets.windows(2).filter(|w| w[0] == w[1]).count() {
                continue;
            }
            let logp = random_logp(&mut rng, frames, 4);
            let lat = CtcLattice::build(&logp, frames, 4, &targets).unwrap();
            assert!(
                (lat.log_likelihood_alpha - lat.log_likelihood_beta).abs() <= 1e-9,
                "{} vs {}",
                lat.log_likelihood_alpha,
                lat.log_likelihood_beta
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(47);
        let (frames, vocab) = (5usize, 4usize);
        let raw = Tensor::param(
            (0..frames * vocab).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[frames, vocab],
        )
        .unwrap();
        let targets = [2usize, 1, 2];
        let rel = finite_difference_check(
            |tape| {
                let lp = tape.log_softmax(&raw)?;
                ctc_loss(tape, &lp, &targets)
            },
            &[raw.clone()],
            1e-5,
        )
        .unwrap();
        assert!(rel <= 1e-4, "rel err {rel}");
    }
}
