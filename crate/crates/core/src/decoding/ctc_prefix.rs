//! Prefix probabilities under a frame-level lattice head, the standard
//! blank/non-blank recursion used for joint decoding.

use crate::data::BLANK;
use crate::error::{Error, Result};
use crate::numerics::{lse2, Tensor};

/// Scores prefixes against a fixed `[T, V]` log-probability grid. All
/// computations can be truncated to a visible frame range, which triggered
/// decoding uses as its horizon grows.
pub struct CtcPrefixScorer {
    logp: Vec<f64>,
    frames: usize,
    vocab: usize,
}

pub struct PrefixScore {
    /// `log P(output begins with the prefix)` over the visible range.
    pub prefix_mass: f64,
    /// `log P(output is exactly the prefix)` over the visible range.
    pub complete: f64,
}

impl CtcPrefixScorer {
    pub fn new(log_probs: &Tensor) -> Result<Self> {
        if log_probs.shape().len() != 2 {
            return Err(Error::invalid("CtcPrefixScorer expects a [T, V] grid"));
        }
        Ok(CtcPrefixScorer {
            logp: log_probs.to_vec(),
            frames: log_probs.rows(),
            vocab: log_probs.cols(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Score a prefix using frames `0..=visible_end` only.
    pub fn score(&self, prefix: &[usize], visible_end: usize) -> Result<PrefixScore> {
        let end = visible_end.min(self.frames - 1);
        let t_len = end + 1;
        let at = |t: usize, k: usize| self.logp[t * self.vocab + k];
        // Empty prefix: all-blank mass, cumulative over time.
        let mut gamma_b = vec![0.0; t_len];
        let mut gamma_n = vec![f64::NEG_INFINITY; t_len];
        let mut acc = 0.0;
        for t in 0..t_len {
            acc += at(t, BLANK);
            gamma_b[t] = acc;
        }
        if prefix.is_empty() {
            return Ok(PrefixScore {
                prefix_mass: 0.0,
                complete: gamma_b[t_len - 1],
            });
        }
        let mut prev_label: Option<usize> = None;
        let mut prefix_mass = 0.0;
        for &c in prefix {
            if c == BLANK || c >= self.vocab {
                return Err(Error::invalid(format!("prefix token {c} invalid")));
            }
            let mut nb = vec![f64::NEG_INFINITY; t_len];
            let mut b = vec![f64::NEG_INFINITY; t_len];
            let mut psi = f64::NEG_INFINITY;
            for t in 0..t_len {
                // Mass of the old prefix ending strictly before t that can
                // legally continue with `c`.
                let phi = if t == 0 {
                    if prev_label.is_none() {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    let mut m = gamma_b[t - 1];
                    if prev_label != Some(c) {
                        m = lse2(m, gamma_n[t - 1]);
                    }
                    m
                };
                let stay = if t == 0 { f64::NEG_INFINITY } else { nb[t - 1] };
                nb[t] = lse2(phi, stay) + at(t, c);
                let blank_prev = if t == 0 {
                    f64::NEG_INFINITY
                } else {
                    lse2(b[t - 1], nb[t - 1])
                };
                b[t] = blank_prev + at(t, BLANK);
                psi = lse2(psi, phi + at(t, c));
            }
            prefix_mass = psi;
            gamma_n = nb;
            gamma_b = b;
            prev_label = Some(c);
        }
        Ok(PrefixScore {
            prefix_mass,
            complete: lse2(gamma_n[t_len - 1], gamma_b[t_len - 1]),
        })
    }

    /// Greedy per-frame argmax with repeat/blank collapsing, plus the frame
    /// where each new output position first appeared.
    pub fn greedy_collapse(&self, visible_end: usize) -> (Vec<usize>, Vec<usize>) {
        let end = visible_end.min(self.frames - 1);
        let mut tokens = Vec::new();
        let mut frames = Vec::new();
        let mut prev = usize::MAX;
        for t in 0..=end {
            let row = &self.logp[t * self.vocab..(t + 1) * self.vocab];
            let a = row
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if a != prev && a != BLANK {
                tokens.push(a);
                frames.push(t);
            }
            prev = a;
        }
        (tokens, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_logp(rng: &mut StdRng, frames: usize, vocab: usize) -> Tensor {
        let mut out = vec![0.0; frames * vocab];
        for t in 0..frames {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + raw.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for k in 0..vocab {
                out[t * vocab + k] = raw[k] - lse;
            }
        }
        Tensor::from_vec(out, &[frames, vocab]).unwrap()
    }

    /// Enumeration oracle for the prefix mass: sum over all frame strings
    /// whose collapse BEGINS with the prefix.
    fn prefix_mass_oracle(logp: &Tensor, prefix: &[usize]) -> f64 {
        let (frames, vocab) = (logp.rows(), logp.cols());
        let v = logp.to_vec();
        let mut masses = Vec::new();
        let mut path = vec![0usize; frames];
        fn walk(
            t: usize,
            frames: usize,
            vocab: usize,
            v: &[f64],
            path: &mut Vec<usize>,
            prefix: &[usize],
            masses: &mut Vec<f64>,
        ) {
            if t == frames {
                let c = oracles::ctc_collapse(path, 0);
                if c.len() >= prefix.len() && c[..prefix.len()] == *prefix {
                    masses.push(path.iter().enumerate().map(|(i, &s)| v[i * vocab + s]).sum());
                }
                return;
            }
            for s in 0..vocab {
                path[t] = s;
                walk(t + 1, frames, vocab, v, path, prefix, masses);
            }
        }
        walk(0, frames, vocab, &v, &mut path, prefix, &mut masses);
        crate::numerics::logsumexp(&masses).unwrap_or(f64::NEG_INFINITY)
    }

    #[test]
    fn prefix_mass_matches_enumeration() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..15 {
            let frames = rng.gen_range(1..=5);
            let vocab = 3;
            let logp = random_logp(&mut rng, frames, vocab);
            let scorer = CtcPrefixScorer::new(&logp).unwrap();
            for prefix in [vec![], vec![1], vec![2, 1], vec![1, 1]] {
                let got = scorer.score(&prefix, frames - 1).unwrap().prefix_mass;
                let want = prefix_mass_oracle(&logp, &prefix);
                assert!(
                    (got - want).abs() <= 1e-9 || (got.is_infinite() && want.is_infinite()),
                    "T={frames} prefix={prefix:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn complete_score_matches_lattice_loss() {
        let mut rng = StdRng::seed_from_u64(54);
        for _ in 0..10 {
            let frames = rng.gen_range(2..=6);
            let logp = random_logp(&mut rng, frames, 4);
            let scorer = CtcPrefixScorer::new(&logp).unwrap();
            let target = vec![2usize, 3];
            let got = scorer.score(&target, frames - 1).unwrap().complete;
            let tape = crate::numerics::Tape::inference();
            let loss = crate::losses::ctc_loss(&tape, &logp, &target).unwrap().item();
            assert!((got + loss).abs() <= 1e-9, "{got} vs {}", -loss);
        }
    }

    #[test]
    fn greedy_collapse_reports_first_frames() {
        // Frames argmax: [b, 1, 1, b, 2] -> tokens [1, 2] at frames [1, 4].
        let rows = [
            [0.0, -5.0, -6.0],
            [-5.0, 0.0, -6.0],
            [-5.0, 0.0, -6.0],
            [0.0, -5.0, -6.0],
            [-6.0, -5.0, 0.0],
        ];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let logp = Tensor::from_vec(flat, &[5, 3]).unwrap();
        let scorer = CtcPrefixScorer::new(&logp).unwrap();
        let (tokens, frames) = scorer.greedy_collapse(4);
        assert_eq!(tokens, vec![1, 2]);
        assert_eq!(frames, vec![1, 4]);
    }
}
