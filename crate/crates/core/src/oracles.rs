//! Independent reference implementations used by the verification suites.
//!
//! Everything here is deliberately naive — exhaustive enumeration and
//! textbook dynamic programs that share no code with the production paths
//! they check.

use crate::numerics::logsumexp;

/// Log of the total probability mass of every monotonic alignment path for
/// `targets` through a `[frames, U+1, vocab]` log-probability grid, by
/// explicit path enumeration. Each path consumes every frame with a blank
/// (symbol 0) and emits every target exactly once, in order.
pub fn transducer_path_sum(grid: &[f64], frames: usize, vocab: usize, targets: &[usize]) -> f64 {
    let rows = targets.len() + 1;
    let at = |t: usize, u: usize, k: usize| grid[(t * rows + u) * vocab + k];
    let mut paths = Vec::new();
    fn walk(
        t: usize,
        u: usize,
        acc: f64,
        frames: usize,
        targets: &[usize],
        at: &dyn Fn(usize, usize, usize) -> f64,
        paths: &mut Vec<f64>,
    ) {
        if t == frames - 1 && u == targets.len() {
            paths.push(acc + at(t, u, 0));
            // Emitting further labels from the corner is impossible only
            // when all labels are consumed, which holds here.
            return;
        }
        if t + 1 < frames {
            walk(t + 1, u, acc + at(t, u, 0), frames, targets, at, paths);
        }
        if u < targets.len() {
            walk(t, u + 1, acc + at(t, u, targets[u]), frames, targets, at, paths);
        }
    }
    walk(0, 0, 0.0, frames, targets, &at, &mut paths);
    logsumexp(&paths).unwrap_or(f64::NEG_INFINITY)
}

/// Number of monotonic transducer paths for a `(frames, labels)` instance.
pub fn transducer_path_count(frames: usize, labels: usize) -> u64 {
    // C(frames - 1 + labels, labels): the terminating blank is pinned.
    binomial((frames - 1 + labels) as u64, labels as u64)
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Collapse a frame-level symbol string: merge repeats, then drop blanks.
pub fn ctc_collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &s in path {
        if s != prev && s != blank {
            out.push(s);
        }
        prev = s;
    }
    out
}

/// Log-probability that a length-`frames` frame-independent sampler emits a
/// string collapsing to `targets`, by enumerating all `vocab^frames`
/// strings. `logp` is `[frames, vocab]`.
pub fn ctc_path_sum(logp: &[f64], frames: usize, vocab: usize, targets: &[usize], blank: usize) -> f64 {
    let mut path = vec![0usize; frames];
    let mut masses = Vec::new();
    fn walk(
        t: usize,
        frames: usize,
        vocab: usize,
        logp: &[f64],
        path: &mut Vec<usize>,
        targets: &[usize],
        blank: usize,
        masses: &mut Vec<f64>,
    ) {
        if t == frames {
            if ctc_collapse(path, blank) == targets {
                let m: f64 = path.iter().enumerate().map(|(i, &s)| logp[i * vocab + s]).sum();
                masses.push(m);
            }
            return;
        }
        for s in 0..vocab {
            path[t] = s;
            walk(t + 1, frames, vocab, logp, path, targets, blank, masses);
        }
    }
    walk(0, frames, vocab, logp, &mut path, targets, blank, &mut masses);
    logsumexp(&masses).unwrap_or(f64::NEG_INFINITY)
}

/// Plain edit distance (substitution/deletion/insertion all cost 1), a
/// second implementation for checking the scorer's alignment counts.
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts() {
        assert_eq!(transducer_path_count(2, 1), 2);
        assert_eq!(transducer_path_count(4, 2), 10);
        assert_eq!(transducer_path_count(1, 0), 1);
        assert_eq!(binomial(7, 3), 35);
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(ctc_collapse(&[1, 1, 0, 1], 0), vec![1, 1]);
        assert_eq!(ctc_collapse(&[0, 0, 0], 0), Vec::<usize>::new());
        assert_eq!(ctc_collapse(&[2, 2, 3], 0), vec![2, 3]);
    }

    #[test]
    fn edit_distance_basics() {
        let s = |v: &[&str]| -> Vec<String> { v.iter().map(|x| x.to_string()).collect() };
        assert_eq!(edit_distance(&s(&["a", "b"]), &s(&["a", "b"])), 0);
        assert_eq!(edit_distance(&s(&["a", "b", "c"]), &s(&["a", "x", "c"])), 1);
        assert_eq!(edit_distance(&s(&[]), &s(&["a"])), 1);
    }
}
