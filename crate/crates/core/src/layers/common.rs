//! Shared building blocks: initialization, linear maps, layer norm,
//! embeddings, and the parameter-naming convention used by checkpoints.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Tape, Tensor};

/// The single RNG type used everywhere; seeded explicitly so runs are
/// reproducible across platforms.
pub type SeedRng = ChaCha8Rng;

pub fn uniform(rng: &mut SeedRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Uniform init in `±1/sqrt(fan_in)`.
pub fn init_matrix(rng: &mut SeedRng, rows: usize, cols: usize) -> Tensor {
    let scale = 1.0 / (rows as f64).sqrt();
    Tensor::param(uniform(rng, rows * cols, scale), &[rows, cols]).expect("init_matrix")
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(vec![0.0; n], shape).expect("zeros_param")
}

pub fn ones_param(shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(vec![1.0; n], shape).expect("ones_param")
}

/// Anything that owns named trainable tensors.
pub trait Parameterized {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }
}

pub fn push_param(out: &mut Vec<(String, Tensor)>, prefix: &str, name: &str, t: &Tensor) {
    let full = if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    };
    out.push((full, t.clone()));
}

/// Dense affine map, weight laid out `[in, out]`.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut SeedRng, input: usize, output: usize, bias: bool) -> Self {
        Linear {
            weight: init_matrix(rng, input, output),
            bias: bias.then(|| zeros_param(&[output])),
        }
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `[r, in] -> [r, out]`.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let y = tape.matmul(x, &self.weight)?;
        match &self.bias {
            Some(b) => tape.add_row_bias(&y, b),
            None => Ok(y),
        }
    }

    /// Vector-in, vector-out convenience.
    pub fn forward_vec(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let m = tape.reshape(x, &[1, x.len()])?;
        let y = self.forward(tape, &m)?;
        tape.reshape(&y, &[y.len()])
    }
}

impl Parameterized for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_param(out, prefix, "weight", &self.weight);
        if let Some(b) = &self.bias {
            push_param(out, prefix, "bias", b);
        }
    }
}

pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: ones_param(&[dim]),
            beta: zeros_param(&[dim]),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

impl Parameterized for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_param(out, prefix, "gamma", &self.gamma);
        push_param(out, prefix, "beta", &self.beta);
    }
}

/// Token embedding table `[vocab, dim]`.
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(rng: &mut SeedRng, vocab: usize, dim: usize) -> Self {
        Embedding {
            table: init_matrix(rng, vocab, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn lookup(&self, tape: &Tape, id: usize) -> Result<Tensor> {
        tape.row(&self.table, id)
    }
}

impl Parameterized for Embedding {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_param(out, prefix, "table", &self.table);
    }
}
