//! Per-block future-context layer.
//!
//! Output at frame `t` is an elementwise-weighted sum of the input at `t`
//! and its next `lookahead` frames; frames past the end of the utterance are
//! treated as absent (the sum truncates). The per-offset weight vectors are
//! the only parameters, so the cost is `(lookahead+1) * dim` extra values
//! per block.

use crate::error::{Error, Result};
use crate::layers::common::*;
use crate::numerics::{Tape, Tensor};

pub struct ContextLayer {
    pub lookahead: usize,
    pub dim: usize,
    /// `[lookahead+1, dim]`, row `d` weighting the frame `t + d`.
    pub weights: Tensor,
}

impl ContextLayer {
    pub fn new(lookahead: usize, dim: usize) -> Self {
        // Averaging start: every offset contributes equally (so the full
        // window is visible to perturbation probes from the first step) and
        // the output keeps the input's scale.
        let w = 1.0 / (lookahead + 1) as f64;
        ContextLayer {
            lookahead,
            dim,
            weights: Tensor::param(vec![w; (lookahead + 1) * dim], &[lookahead + 1, dim]).unwrap(),
        }
    }

    pub fn param_count(&self) -> usize {
        (self.lookahead + 1) * self.dim
    }

    /// `[T, dim] -> [T, dim]`.
    pub fn forward(&self, tape: &Tape, xs: &Tensor) -> Result<Tensor> {
        if xs.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "context_apply",
                lhs: xs.shape().to_vec(),
                rhs: vec![self.lookahead + 1, self.dim],
            });
        }
        let t_len = xs.rows();
        let mut acc: Option<Tensor> = None;
        for d in 0..=self.lookahead {
            if d >= t_len {
                break;
            }
            let shifted = tape.slice_rows(xs, d, t_len)?;
            let w = tape.row(&self.weights, d)?;
            let mut part = tape.mul_row_bcast(&shifted, &w)?;
            if d > 0 {
                let pad = Tensor::zeros(&[d, self.dim]);
                part = tape.concat_rows(&[&part, &pad])?;
            }
            acc = Some(match acc {
                Some(a) => tape.add(&a, &part)?,
                None => part,
            });
        }
        acc.ok_or_else(|| Error::invalid("context_apply on empty sequence"))
    }
}

impl Parameterized for ContextLayer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_param(out, prefix, "weights", &self.weights);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lookahead_all_ones_is_identity() {
        let layer = ContextLayer::new(0, 3);
        let xs = Tensor::from_vec(vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0], &[2, 3]).unwrap();
        let tape = Tape::new();
        let out = layer.forward(&tape, &xs).unwrap();
        assert_eq!(out.to_vec(), xs.to_vec());
    }

    #[test]
    fn one_step_lookahead_with_unit_weights_sums_adjacent_frames() {
        let layer = ContextLayer::new(1, 2);
        layer.weights.set_values(&[1.0; 4]);
        // one-hot in time
        let xs = Tensor::from_vec(vec![0.0, 0.0, 5.0, 7.0, 0.0, 0.0], &[3, 2]).unwrap();
        let tape = Tape::new();
        let out = layer.forward(&tape, &xs).unwrap();
        // row t = x_t + x_{t+1}
        assert_eq!(out.to_vec(), vec![5.0, 7.0, 5.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn parameter_count_is_window_times_dim() {
        let layer = ContextLayer::new(4, 16);
        assert_eq!(layer.param_count(), 5 * 16);
        let total: usize = layer.named_params().iter().map(|(_, p)| p.len()).sum();
        assert_eq!(total, 80);
    }

    #[test]
    fn receptive_field_is_exactly_the_window() {
        let layer = ContextLayer::new(2, 1);
        let base = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let run = |data: Vec<f64>| {
            let xs = Tensor::from_vec(data, &[6, 1]).unwrap();
            let tape = Tape::inference();
            layer.forward(&tape, &xs).unwrap().to_vec()
        };
        let a = run(base.clone());
        let mut inside = base.clone();
        inside[2] += 1.0; // t=0 sees offsets 0..=2
        let b = run(inside);
        assert_ne!(a[0], b[0]);
        let mut outside = base.clone();
        outside[3] += 1.0;
        let c = run(outside);
        assert_eq!(a[0], c[0]);
        assert_ne!(a[1], c[1]);
    }

    #[test]
    fn truncates_at_sequence_end() {
        let layer = ContextLayer::new(3, 1);
        layer.weights.set_values(&[1.0; 4]);
        let xs = Tensor::from_vec(vec![1.0, 1.0], &[2, 1]).unwrap();
        let tape = Tape::new();
        let out = layer.forward(&tape, &xs).unwrap();
        // t=0 sums frames {0,1}; t=1 sums frame {1} only.
        assert_eq!(out.to_vec(), vec![2.0, 1.0]);
    }
}
