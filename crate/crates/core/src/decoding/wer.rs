//! Word error rate via minimum-edit alignment.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn wer(&self) -> f64 {
        self.edits() as f64 / self.ref_len as f64
    }

    pub fn accumulate(&mut self, other: &WerBreakdown) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Levenshtein alignment minimizing substitutions + deletions + insertions,
/// with the counts recovered by backtrace.
pub fn word_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::invalid("word_error_rate: empty reference"));
    }
    let (r, h) = (reference.len(), hyp.len());
    let cols = h + 1;
    let mut cost = vec![0usize; (r + 1) * cols];
    for j in 0..=h {
        cost[j] = j;
    }
    for i in 1..=r {
        cost[i * cols] = i;
        for j in 1..=h {
            let sub = cost[(i - 1) * cols + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = cost[(i - 1) * cols + j] + 1;
            let ins = cost[i * cols + j - 1] + 1;
            cost[i * cols + j] = sub.min(del).min(ins);
        }
    }
    let mut out = WerBreakdown {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        ref_len: r,
    };
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diag = cost[(i - 1) * cols + j - 1];
            if cost[i * cols + j] == diag + usize::from(reference[i - 1] != hyp[j - 1]) {
                if reference[i - 1] != hyp[j - 1] {
                    out.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i * cols + j] == cost[(i - 1) * cols + j] + 1 {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::edit_distance;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(|w| w.to_string()).collect()
    }

    #[test]
    fn identical_is_zero() {
        let w = words("go left now");
        let b = word_error_rate(&w, &w).unwrap();
        assert_eq!(b.edits(), 0);
        assert_eq!(b.wer(), 0.0);
    }

    #[test]
    fn one_substitution_in_four() {
        let b = word_error_rate(&words("go left up down"), &words("go right up down")).unwrap();
        assert_eq!(b.substitutions, 1);
        assert_eq!(b.deletions, 0);
        assert_eq!(b.insertions, 0);
        assert_eq!(b.wer(), 0.25);
    }

    #[test]
    fn empty_reference_is_error() {
        assert!(word_error_rate(&words("a"), &words("")).is_err());
    }

    #[test]
    fn matches_independent_dp_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(51);
        let lexicon = ["a", "b", "c", "d"];
        for _ in 0..200 {
            let mk = |rng: &mut StdRng, lo: usize| -> Vec<String> {
                let n = rng.gen_range(lo..7);
                (0..n).map(|_| lexicon[rng.gen_range(0..4)].to_string()).collect()
            };
            let reference = mk(&mut rng, 1);
            let hyp = mk(&mut rng, 0);
            let b = word_error_rate(&hyp, &reference).unwrap();
            assert_eq!(b.edits(), edit_distance(&reference, &hyp));
        }
    }
}
