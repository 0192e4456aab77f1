//! Multi-head scaled dot-product attention with explicit allow/forbid masks.

use crate::error::{Error, Result};
use crate::layers::common::*;
use crate::numerics::{Tape, Tensor};

pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub head_dim: usize,
    wq: Vec<Tensor>, // per head [model, head_dim]
    wk: Vec<Tensor>,
    wv: Vec<Tensor>,
    w_out: Tensor, // [num_heads*head_dim, model]
}

impl MultiHeadAttention {
    pub fn new(rng: &mut SeedRng, model_dim: usize, num_heads: usize, head_dim: usize) -> Self {
        let mk = |rng: &mut SeedRng| init_matrix(rng, model_dim, head_dim);
        MultiHeadAttention {
            num_heads,
            head_dim,
            wq: (0..num_heads).map(|_| mk(rng)).collect(),
            wk: (0..num_heads).map(|_| mk(rng)).collect(),
            wv: (0..num_heads).map(|_| mk(rng)).collect(),
            w_out: init_matrix(rng, num_heads * head_dim, model_dim),
        }
    }

    /// `queries: [Tq, model]`, `keys/values: [Tk, model]`,
    /// `allow: Tq*Tk` row-major mask. Every query must have at least one
    /// allowed key.
    pub fn forward(
        &self,
        tape: &Tape,
        queries: &Tensor,
        keys: &Tensor,
        values: &Tensor,
        allow: &[bool],
    ) -> Result<Tensor> {
        let tq = queries.rows();
        let tk = keys.rows();
        if keys.shape() != values.shape() {
            return Err(Error::ShapeMismatch {
                op: "multihead_attention",
                lhs: keys.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        if allow.len() != tq * tk {
            return Err(Error::invalid(format!(
                "multihead_attention: mask has {} entries, expected {}x{}",
                allow.len(),
                tq,
                tk
            )));
        }
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.num_heads);
        for i in 0..self.num_heads {
            let q = tape.matmul(queries, &self.wq[i])?;
            let k = tape.matmul(keys, &self.wk[i])?;
            let v = tape.matmul(values, &self.wv[i])?;
            let scores = tape.scale(&tape.matmul_nt(&q, &k)?, scale)?;
            let weights = tape.softmax_masked(&scores, allow)?;
            heads.push(tape.matmul(&weights, &v)?);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        let cat = tape.concat_cols(&refs)?;
        tape.matmul(&cat, &self.w_out)
    }

    /// Attention weights of head 0 (diagnostics and tests).
    pub fn head0_weights(
        &self,
        tape: &Tape,
        queries: &Tensor,
        keys: &Tensor,
        allow: &[bool],
    ) -> Result<Tensor> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let q = tape.matmul(queries, &self.wq[0])?;
        let k = tape.matmul(keys, &self.wk[0])?;
        let scores = tape.scale(&tape.matmul_nt(&q, &k)?, scale)?;
        tape.softmax_masked(&scores, allow)
    }
}

impl Parameterized for MultiHeadAttention {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for i in 0..self.num_heads {
            push_param(out, prefix, &format!("q{i}"), &self.wq[i]);
            push_param(out, prefix, &format!("k{i}"), &self.wk[i]);
            push_param(out, prefix, &format!("v{i}"), &self.wv[i]);
        }
        push_param(out, prefix, "out", &self.w_out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn identity(n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        v
    }

    #[test]
    fn single_key_returns_that_value_row() {
        let mut rng = SeedRng::seed_from_u64(3);
        let mha = MultiHeadAttention::new(&mut rng, 3, 1, 3);
        mha.wq[0].set_values(&identity(3));
        mha.wk[0].set_values(&identity(3));
        mha.wv[0].set_values(&identity(3));
        mha.w_out.set_values(&identity(3));
        let q = Tensor::from_vec(vec![0.3, -0.2, 0.9], &[1, 3]).unwrap();
        let kv = Tensor::from_vec(vec![1.5, 2.5, -3.5], &[1, 3]).unwrap();
        let tape = Tape::new();
        let out = mha.forward(&tape, &q, &kv, &kv, &[true]).unwrap();
        assert_eq!(out.to_vec(), kv.to_vec());
    }

    #[test]
    fn equal_scores_average_unmasked_values() {
        let mut rng = SeedRng::seed_from_u64(4);
        let mha = MultiHeadAttention::new(&mut rng, 2, 1, 2);
        // Zero query projection makes every score equal.
        mha.wq[0].set_values(&vec![0.0; 4]);
        mha.wv[0].set_values(&identity(2));
        mha.w_out.set_values(&identity(2));
        let q = Tensor::from_vec(vec![1.0, 1.0], &[1, 2]).unwrap();
        let kv = Tensor::from_vec(vec![2.0, 0.0, 4.0, 2.0, 9.0, 9.0], &[3, 2]).unwrap();
        let tape = Tape::new();
        // Mask out the last key: expect the mean of rows 0 and 1.
        let out = mha.forward(&tape, &q, &kv, &kv, &[true, true, false]).unwrap();
        assert_eq!(out.to_vec(), vec![3.0, 1.0]);
    }

    #[test]
    fn matches_direct_recomputation() {
        let mut rng = SeedRng::seed_from_u64(5);
        let mha = MultiHeadAttention::new(&mut rng, 4, 2, 2);
        let x = Tensor::from_vec(uniform(&mut rng, 12, 1.0), &[3, 4]).unwrap();
        let allow = vec![true; 9];
        let tape = Tape::new();
        let got = mha.forward(&tape, &x, &x, &x, &allow).unwrap().to_vec();

        // Independent straightforward recomputation with plain loops.
        let xv = x.to_vec();
        let proj = |w: &Tensor| -> Vec<f64> {
            let wv = w.to_vec();
            let mut out = vec![0.0; 3 * 2];
            for r in 0..3 {
                for c in 0..2 {
                    for k in 0..4 {
                        out[r * 2 + c] += xv[r * 4 + k] * wv[k * 2 + c];
                    }
                }
            }
            out
        };
        let mut cat = vec![0.0; 3 * 4];
        for h in 0..2 {
            let q = proj(&mha.wq[h]);
            let k = proj(&mha.wk[h]);
            let v = proj(&mha.wv[h]);
            for r in 0..3 {
                let mut scores = [0.0f64; 3];
                for s in 0..3 {
                    let mut e = 0.0;
                    for d in 0..2 {
                        e += q[r * 2 + d] * k[s * 2 + d];
                    }
                    scores[s] = e / (2.0f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|e| (e - m).exp()).sum();
                for d in 0..2 {
                    let mut acc = 0.0;
                    for s in 0..3 {
                        acc += ((scores[s] - m).exp() / z) * v[s * 2 + d];
                    }
                    cat[r * 4 + h * 2 + d] = acc;
                }
            }
        }
        let wo = mha.w_out.to_vec();
        let mut expect = vec![0.0; 3 * 4];
        for r in 0..3 {
            for c in 0..4 {
                for k in 0..4 {
                    expect[r * 4 + c] += cat[r * 4 + k] * wo[k * 4 + c];
                }
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn fully_masked_query_is_an_error() {
        let mut rng = SeedRng::seed_from_u64(6);
        let mha = MultiHeadAttention::new(&mut rng, 2, 1, 2);
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let tape = Tape::new();
        let err = mha.forward(&tape, &x, &x, &x, &[true, true, false, false]);
        assert!(err.is_err());
    }

    #[test]
    fn weights_sum_to_one_over_unmasked_keys() {
        let mut rng = SeedRng::seed_from_u64(7);
        let mha = MultiHeadAttention::new(&mut rng, 4, 2, 3);
        let x = Tensor::from_vec(uniform(&mut rng, 16, 2.0), &[4, 4]).unwrap();
        let allow: Vec<bool> = (0..16).map(|i| i % 3 != 1).collect();
        let tape = Tape::new();
        let w = mha.head0_weights(&tape, &x, &x, &allow).unwrap().to_vec();
        for r in 0..4 {
            let row = &w[r * 4..(r + 1) * 4];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {r} sums to {sum}");
            for (c, v) in row.iter().enumerate() {
                if !allow[r * 4 + c] {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }
}
