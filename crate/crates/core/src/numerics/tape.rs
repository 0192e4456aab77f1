//! Wengert tape: reverse-mode AD via operation recording.
//!
//! Primitive operations are methods on [`Tape`]. Each call computes the
//! forward value, and — when the tape is recording and at least one input
//! requires a gradient — pushes a record holding the input handles and a
//! backward closure. `backward()` replays the records in exact reverse
//! order, accumulating gradients additively across fan-out.
//!
//! Everything is `f64`; recording order is the topological order, so two
//! identical forward+backward passes produce bit-identical gradients.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Context handed to a backward closure.
pub struct BackCtx<'a> {
    /// Upstream gradient, same length as the op output.
    pub d_out: &'a [f64],
    /// Which inputs need a gradient (aligned with the op's inputs).
    pub need: &'a [bool],
}

type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Option<Vec<f64>>>>;

struct TapeOp {
    inputs: Vec<Tensor>,
    output: Tensor,
    backward: BackwardFn,
}

/// Records primitive operations for one forward/backward pass.
///
/// One tape per model step; drop it after reading gradients. A tape
/// constructed with [`Tape::inference`] never records, so decoding runs
/// without autodiff overhead.
pub struct Tape {
    ops: RefCell<Vec<TapeOp>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// Forward-only tape: values are computed, nothing is recorded.
    pub fn inference() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn op_count(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn record(&self, inputs: &[&Tensor], values: Vec<f64>, shape: Vec<usize>, backward: BackwardFn) -> Tensor {
        let needs = self.recording && inputs.iter().any(|t| t.requires_grad());
        let out = Tensor::computed(values, shape, needs);
        if needs {
            self.ops.borrow_mut().push(TapeOp {
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                output: out.clone(),
                backward,
            });
        }
        out
    }

    /// Register an externally computed operation with a hand-written backward
    /// closure. Used by the lattice losses, whose gradients come from their
    /// own forward/backward recursions rather than from primitive chaining.
    pub fn custom_op(
        &self,
        inputs: &[&Tensor],
        values: Vec<f64>,
        shape: &[usize],
        backward: BackwardFn,
    ) -> Tensor {
        self.record(inputs, values, shape.to_vec(), backward)
    }

    /// Run reverse-mode accumulation from a scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        loss.accumulate_grad(&[1.0]);
        let ops = self.ops.borrow();
        for op in ops.iter().rev() {
            let d_out = match op.output.grad() {
                Some(g) => g,
                None => continue, // not on the path to the loss
            };
            let need: Vec<bool> = op.inputs.iter().map(|t| t.requires_grad()).collect();
            let ctx = BackCtx {
                d_out: &d_out,
                need: &need,
            };
            let grads = (op.backward)(&ctx);
            debug_assert_eq!(grads.len(), op.inputs.len());
            for (input, g) in op.inputs.iter().zip(grads) {
                if let Some(g) = g {
                    debug_assert_eq!(g.len(), input.len());
                    input.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

pub(crate) fn mat_mul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl Tape {
    // ── linear algebra ──────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", a, b));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let values = mat_mul(&a.values(), &b.values(), m, k, n);
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(
            &[a, b],
            values,
            vec![m, n],
            Box::new(move |ctx| {
                let da = ctx.need[0].then(|| {
                    let bt = transpose(&bc.values(), k, n);
                    mat_mul(ctx.d_out, &bt, m, n, k)
                });
                let db = ctx.need[1].then(|| {
                    let at = transpose(&ac.values(), m, k);
                    mat_mul(&at, ctx.d_out, k, m, n)
                });
                vec![da, db]
            }),
        ))
    }

    /// `[m,k] x [n,k]^T -> [m,n]` (second operand transposed).
    pub fn matmul_nt(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
            return Err(shape_err("matmul_nt", a, b));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[0];
        let bt = transpose(&b.values(), n, k);
        let values = mat_mul(&a.values(), &bt, m, k, n);
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(
            &[a, b],
            values,
            vec![m, n],
            Box::new(move |ctx| {
                let da = ctx.need[0].then(|| mat_mul(ctx.d_out, &bc.values(), m, n, k));
                let db = ctx.need[1].then(|| {
                    let dt = transpose(ctx.d_out, m, n);
                    mat_mul(&dt, &ac.values(), n, m, k)
                });
                vec![da, db]
            }),
        ))
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("add", a, b));
        }
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x + y).collect();
        let shape = a.shape().to_vec();
        Ok(self.record(
            &[a, b],
            values,
            shape,
            Box::new(|ctx| {
                vec![
                    ctx.need[0].then(|| ctx.d_out.to_vec()),
                    ctx.need[1].then(|| ctx.d_out.to_vec()),
                ]
            }),
        ))
    }

    /// Add a length-`c` bias to every row of an `[r,c]` matrix. The one
    /// broadcasting form the tensor layer supports.
    pub fn add_row_bias(&self, m: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if bias.shape().len() != 1 || m.cols() != bias.len() {
            return Err(shape_err("add_row_bias", m, bias));
        }
        let cols = m.cols();
        let rows = m.rows();
        let bv = bias.values();
        let values: Vec<f64> = m
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % cols])
            .collect();
        drop(bv);
        let shape = m.shape().to_vec();
        Ok(self.record(
            &[m, bias],
            values,
            shape,
            Box::new(move |ctx| {
                let dm = ctx.need[0].then(|| ctx.d_out.to_vec());
                let db = ctx.need[1].then(|| {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += ctx.d_out[r * cols + c];
                        }
                    }
                    d
                });
                vec![dm, db]
            }),
        ))
    }

    /// Broadcast-add a 1-element tensor to every entry of `x`.
    pub fn add_scalar_t(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(shape_err("add_scalar_t", x, s));
        }
        let sv = s.item();
        let values: Vec<f64> = x.values().iter().map(|v| v + sv).collect();
        let shape = x.shape().to_vec();
        Ok(self.record(
            &[x, s],
            values,
            shape,
            Box::new(|ctx| {
                vec![
                    ctx.need[0].then(|| ctx.d_out.to_vec()),
                    ctx.need[1].then(|| vec![ctx.d_out.iter().sum()]),
                ]
            }),
        ))
    }

    /// Multiply every row of an `[r,c]` matrix elementwise by a length-`c`
    /// vector.
    pub fn mul_row_bcast(&self, m: &Tensor, v: &Tensor) -> Result<Tensor> {
        if v.shape().len() != 1 || m.cols() != v.len() {
            return Err(shape_err("mul_row_bcast", m, v));
        }
        let cols = m.cols();
        let rows = m.rows();
        let vv = v.values();
        let values: Vec<f64> = m
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x * vv[i % cols])
            .collect();
        drop(vv);
        let shape = m.shape().to_vec();
        let (mc, vc) = (m.clone(), v.clone());
        Ok(self.record(
            &[m, v],
            values,
            shape,
            Box::new(move |ctx| {
                let dm = ctx.need[0].then(|| {
                    let vv = vc.values();
                    ctx.d_out
                        .iter()
                        .enumerate()
                        .map(|(i, d)| d * vv[i % cols])
                        .collect()
                });
                let dv = ctx.need[1].then(|| {
                    let mv = mc.values();
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += ctx.d_out[r * cols + c] * mv[r * cols + c];
                        }
                    }
                    d
                });
                vec![dm, dv]
            }),
        ))
    }

    /// Broadcast-multiply every entry of `x` by a 1-element tensor.
    pub fn mul_scalar_t(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(shape_err("mul_scalar_t", x, s));
        }
        let sv = s.item();
        let values: Vec<f64> = x.values().iter().map(|v| v * sv).collect();
        let shape = x.shape().to_vec();
        let (xc, sc) = (x.clone(), s.clone());
        Ok(self.record(
            &[x, s],
            values,
            shape,
            Box::new(move |ctx| {
                let sv = sc.item();
                let dx = ctx.need[0].then(|| ctx.d_out.iter().map(|d| d * sv).collect());
                let ds = ctx.need[1].then(|| {
                    vec![ctx
                        .d_out
                        .iter()
                        .zip(xc.values().iter())
                        .map(|(d, x)| d * x)
                        .sum()]
                });
                vec![dx, ds]
            }),
        ))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("sub", a, b));
        }
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x - y).collect();
        let shape = a.shape().to_vec();
        Ok(self.record(
            &[a, b],
            values,
            shape,
            Box::new(|ctx| {
                vec![
                    ctx.need[0].then(|| ctx.d_out.to_vec()),
                    ctx.need[1].then(|| ctx.d_out.iter().map(|d| -d).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("mul", a, b));
        }
        let values: Vec<f64> = a.values().iter().zip(b.values().iter()).map(|(x, y)| x * y).collect();
        let shape = a.shape().to_vec();
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(
            &[a, b],
            values,
            shape,
            Box::new(move |ctx| {
                let da = ctx.need[0]
                    .then(|| ctx.d_out.iter().zip(bc.values().iter()).map(|(d, y)| d * y).collect());
                let db = ctx.need[1]
                    .then(|| ctx.d_out.iter().zip(ac.values().iter()).map(|(d, x)| d * x).collect());
                vec![da, db]
            }),
        ))
    }

    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        let values: Vec<f64> = x.values().iter().map(|v| v * c).collect();
        let shape = x.shape().to_vec();
        Ok(self.record(
            &[x],
            values,
            shape,
            Box::new(move |ctx| vec![ctx.need[0].then(|| ctx.d_out.iter().map(|d| d * c).collect())]),
        ))
    }

    fn unary(
        &self,
        name: &'static str,
        x: &Tensor,
        f: fn(f64) -> f64,
        dfdy: fn(f64, f64) -> f64, // (x, y) -> dy/dx
    ) -> Result<Tensor> {
        let _ = name;
        let values: Vec<f64> = x.values().iter().map(|&v| f(v)).collect();
        let shape = x.shape().to_vec();
        let xc = x.clone();
        let yv = values.clone();
        Ok(self.record(
            &[x],
            values,
            shape,
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let xs = xc.values();
                    ctx.d_out
                        .iter()
                        .zip(xs.iter().zip(yv.iter()))
                        .map(|(d, (&xi, &yi))| d * dfdy(xi, yi))
                        .collect()
                })]
            }),
        ))
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("relu", x, |v| if v > 0.0 { v } else { 0.0 }, |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn sqrt(&self, x: &Tensor) -> Result<Tensor> {
        self.unary("sqrt", x, f64::sqrt, |_, y| 0.5 / y)
    }

    /// Broadcast-divide every entry of `x` by a 1-element tensor.
    pub fn div_scalar_t(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(shape_err("div_scalar_t", x, s));
        }
        let sv = s.item();
        let values: Vec<f64> = x.values().iter().map(|v| v / sv).collect();
        let shape = x.shape().to_vec();
        let (xc, sc) = (x.clone(), s.clone());
        Ok(self.record(
            &[x, s],
            values,
            shape,
            Box::new(move |ctx| {
                let sv = sc.item();
                let dx = ctx.need[0].then(|| ctx.d_out.iter().map(|d| d / sv).collect());
                let ds = ctx.need[1].then(|| {
                    vec![ctx
                        .d_out
                        .iter()
                        .zip(xc.values().iter())
                        .map(|(d, x)| -d * x / (sv * sv))
                        .sum()]
                });
                vec![dx, ds]
            }),
        ))
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let s: f64 = x.values().iter().sum();
        let n = x.len();
        Ok(self.record(
            &[x],
            vec![s],
            vec![1],
            Box::new(move |ctx| vec![ctx.need[0].then(|| vec![ctx.d_out[0]; n])]),
        ))
    }

    pub fn mean_all(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.len();
        let s: f64 = x.values().iter().sum();
        Ok(self.record(
            &[x],
            vec![s / n as f64],
            vec![1],
            Box::new(move |ctx| vec![ctx.need[0].then(|| vec![ctx.d_out[0] / n as f64; n])]),
        ))
    }

    pub fn dot(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_err("dot", a, b));
        }
        let s: f64 = a.values().iter().zip(b.values().iter()).map(|(x, y)| x * y).sum();
        let (ac, bc) = (a.clone(), b.clone());
        Ok(self.record(
            &[a, b],
            vec![s],
            vec![1],
            Box::new(move |ctx| {
                let d = ctx.d_out[0];
                vec![
                    ctx.need[0].then(|| bc.values().iter().map(|y| d * y).collect()),
                    ctx.need[1].then(|| ac.values().iter().map(|x| d * x).collect()),
                ]
            }),
        ))
    }

    /// Numerically stable log-sum-exp over all entries; `-inf` entries act as
    /// exact zeros of probability.
    pub fn logsumexp_all(&self, x: &Tensor) -> Result<Tensor> {
        let lse = super::logsumexp(&x.values())?;
        let xc = x.clone();
        Ok(self.record(
            &[x],
            vec![lse],
            vec![1],
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let xs = xc.values();
                    xs.iter()
                        .map(|&v| {
                            if v == f64::NEG_INFINITY {
                                0.0
                            } else {
                                ctx.d_out[0] * (v - lse).exp()
                            }
                        })
                        .collect()
                })]
            }),
        ))
    }

    // ── normalization / probability ─────────────────────────────────

    fn softmax_rows_values(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - m).exp();
                out[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                out[r * cols + c] /= z;
            }
        }
        out
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = (x.rows(), x.cols());
        let values = Self::softmax_rows_values(&x.values(), rows, cols);
        let shape = x.shape().to_vec();
        let yv = values.clone();
        Ok(self.record(
            &[x],
            values,
            shape,
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| softmax_backward(&yv, ctx.d_out, rows, cols))]
            }),
        ))
    }

    /// Log-softmax over the trailing axis.
    pub fn log_softmax(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = (x.rows(), x.cols());
        let xv = x.values();
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            for c in 0..cols {
                values[r * cols + c] = row[c] - lse;
            }
        }
        drop(xv);
        let shape = x.shape().to_vec();
        let yv = values.clone();
        Ok(self.record(
            &[x],
            values,
            shape,
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let base = r * cols;
                        let dsum: f64 = ctx.d_out[base..base + cols].iter().sum();
                        for c in 0..cols {
                            dx[base + c] = ctx.d_out[base + c] - yv[base + c].exp() * dsum;
                        }
                    }
                    dx
                })]
            }),
        ))
    }

    /// Row-wise softmax restricted to allowed positions. Forbidden positions
    /// get weight exactly zero; a fully forbidden row is an error.
    pub fn softmax_masked(&self, scores: &Tensor, allow: &[bool]) -> Result<Tensor> {
        let (rows, cols) = (scores.rows(), scores.cols());
        if allow.len() != rows * cols {
            return Err(Error::invalid(format!(
                "softmax_masked: mask of {} entries for a {}x{} score matrix",
                allow.len(),
                rows,
                cols
            )));
        }
        let xv = scores.values();
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let base = r * cols;
            let mut m = f64::NEG_INFINITY;
            for c in 0..cols {
                if allow[base + c] {
                    m = m.max(xv[base + c]);
                }
            }
            if m == f64::NEG_INFINITY {
                return Err(Error::invalid(format!(
                    "softmax_masked: query row {} has no allowed keys",
                    r
                )));
            }
            let mut z = 0.0;
            for c in 0..cols {
                if allow[base + c] {
                    let e = (xv[base + c] - m).exp();
                    values[base + c] = e;
                    z += e;
                }
            }
            for c in 0..cols {
                values[base + c] /= z;
            }
        }
        drop(xv);
        let shape = scores.shape().to_vec();
        let yv = values.clone();
        Ok(self.record(
            &[scores],
            values,
            shape,
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| softmax_backward(&yv, ctx.d_out, rows, cols))]
            }),
        ))
    }

    /// Row-wise layer normalization with affine terms:
    /// `y = (x - mean) / sqrt(var + eps) * gamma + beta`.
    pub fn layer_norm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let cols = x.cols();
        if gamma.shape() != [cols] {
            return Err(shape_err("layer_norm", x, gamma));
        }
        if beta.shape() != [cols] {
            return Err(shape_err("layer_norm", x, beta));
        }
        let rows = x.rows();
        let xv = x.values();
        let gv = gamma.values();
        let bv = beta.values();
        let mut values = vec![0.0; rows * cols];
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let base = r * cols;
            let row = &xv[base..base + cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[base + c] = h;
                values[base + c] = h * gv[c] + bv[c];
            }
        }
        drop(xv);
        drop(gv);
        drop(bv);
        let shape = x.shape().to_vec();
        let gc = gamma.clone();
        Ok(self.record(
            &[x, gamma, beta],
            values,
            shape,
            Box::new(move |ctx| {
                let gv = gc.values();
                let dgamma = ctx.need[1].then(|| {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += ctx.d_out[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                    d
                });
                let dbeta = ctx.need[2].then(|| {
                    let mut d = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += ctx.d_out[r * cols + c];
                        }
                    }
                    d
                });
                let dx = ctx.need[0].then(|| {
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let base = r * cols;
                        let mut mean_dh = 0.0;
                        let mut mean_dh_xhat = 0.0;
                        for c in 0..cols {
                            let dh = ctx.d_out[base + c] * gv[c];
                            mean_dh += dh;
                            mean_dh_xhat += dh * xhat[base + c];
                        }
                        mean_dh /= cols as f64;
                        mean_dh_xhat /= cols as f64;
                        for c in 0..cols {
                            let dh = ctx.d_out[base + c] * gv[c];
                            dx[base + c] =
                                inv_std[r] * (dh - mean_dh - xhat[base + c] * mean_dh_xhat);
                        }
                    }
                    dx
                });
                vec![dx, dgamma, dbeta]
            }),
        ))
    }

    // ── structure: concat / slice / reshape / gather ────────────────

    /// Stack 1-D tensors of equal length into a matrix, or concatenate
    /// matrices with equal column counts along the row axis.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_rows: no inputs"));
        }
        let cols = parts[0].cols();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(shape_err("concat_rows", parts[0], p));
            }
            rows += p.rows();
        }
        let mut values = Vec::with_capacity(rows * cols);
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            values.extend_from_slice(&p.values());
            sizes.push(p.len());
        }
        Ok(self.record(
            parts,
            values,
            vec![rows, cols],
            Box::new(move |ctx| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut off = 0;
                for (i, &sz) in sizes.iter().enumerate() {
                    out.push(ctx.need[i].then(|| ctx.d_out[off..off + sz].to_vec()));
                    off += sz;
                }
                out
            }),
        ))
    }

    /// Concatenate matrices (or vectors) along the trailing axis.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols: no inputs"));
        }
        let rows = parts[0].rows();
        for p in parts {
            if p.rows() != rows {
                return Err(shape_err("concat_cols", parts[0], p));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut values = vec![0.0; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                let pv = p.values();
                values[r * total + off..r * total + off + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
                off += w;
            }
        }
        let shape = if parts[0].shape().len() == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        Ok(self.record(
            parts,
            values,
            shape,
            Box::new(move |ctx| {
                let mut out = Vec::with_capacity(widths.len());
                let mut off = 0;
                for (i, &w) in widths.iter().enumerate() {
                    out.push(ctx.need[i].then(|| {
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            d[r * w..(r + 1) * w]
                                .copy_from_slice(&ctx.d_out[r * total + off..r * total + off + w]);
                        }
                        d
                    }));
                    off += w;
                }
                out
            }),
        ))
    }

    /// Extract row `i` of a matrix as a vector.
    pub fn row(&self, x: &Tensor, i: usize) -> Result<Tensor> {
        let (rows, cols) = (x.rows(), x.cols());
        if i >= rows {
            return Err(Error::invalid(format!("row {} out of {} rows", i, rows)));
        }
        let values = x.values()[i * cols..(i + 1) * cols].to_vec();
        Ok(self.record(
            &[x],
            values,
            vec![cols],
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let mut d = vec![0.0; rows * cols];
                    d[i * cols..(i + 1) * cols].copy_from_slice(ctx.d_out);
                    d
                })]
            }),
        ))
    }

    /// Rows `[a, b)` of a matrix.
    pub fn slice_rows(&self, x: &Tensor, a: usize, b: usize) -> Result<Tensor> {
        let (rows, cols) = (x.rows(), x.cols());
        if a >= b || b > rows {
            return Err(Error::invalid(format!(
                "slice_rows [{},{}) out of {} rows",
                a, b, rows
            )));
        }
        let values = x.values()[a * cols..b * cols].to_vec();
        Ok(self.record(
            &[x],
            values,
            vec![b - a, cols],
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let mut d = vec![0.0; rows * cols];
                    d[a * cols..b * cols].copy_from_slice(ctx.d_out);
                    d
                })]
            }),
        ))
    }

    /// Entries `[a, b)` of a vector.
    pub fn slice_vec(&self, x: &Tensor, a: usize, b: usize) -> Result<Tensor> {
        let n = x.len();
        if x.shape().len() != 1 || a >= b || b > n {
            return Err(Error::invalid(format!(
                "slice_vec [{},{}) on shape {:?}",
                a,
                b,
                x.shape()
            )));
        }
        let values = x.values()[a..b].to_vec();
        Ok(self.record(
            &[x],
            values,
            vec![b - a],
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let mut d = vec![0.0; n];
                    d[a..b].copy_from_slice(ctx.d_out);
                    d
                })]
            }),
        ))
    }

    /// Same flat data under a new shape (copying).
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != x.len() {
            return Err(Error::invalid(format!(
                "reshape {:?} -> {:?}: element count mismatch",
                x.shape(),
                shape
            )));
        }
        let values = x.to_vec();
        Ok(self.record(
            &[x],
            values,
            shape.to_vec(),
            Box::new(|ctx| vec![ctx.need[0].then(|| ctx.d_out.to_vec())]),
        ))
    }

    /// Pick one entry per row: `out[r] = x[r, idx[r]]`.
    pub fn gather_rows(&self, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let (rows, cols) = (x.rows(), x.cols());
        if idx.len() != rows {
            return Err(Error::invalid(format!(
                "gather_rows: {} indices for {} rows",
                idx.len(),
                rows
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::invalid(format!(
                "gather_rows: index {} out of {} columns",
                bad, cols
            )));
        }
        let xv = x.values();
        let values: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| xv[r * cols + c]).collect();
        drop(xv);
        let idx = idx.to_vec();
        Ok(self.record(
            &[x],
            values,
            vec![rows],
            Box::new(move |ctx| {
                vec![ctx.need[0].then(|| {
                    let mut d = vec![0.0; rows * cols];
                    for (r, &c) in idx.iter().enumerate() {
                        d[r * cols + c] = ctx.d_out[r];
                    }
                    d
                })]
            }),
        ))
    }
}

fn softmax_backward(y: &[f64], d_out: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cols];
    for r in 0..rows {
        let base = r * cols;
        let mut dot = 0.0;
        for c in 0..cols {
            dot += d_out[base + c] * y[base + c];
        }
        for c in 0..cols {
            dx[base + c] = y[base + c] * (d_out[base + c] - dot);
        }
    }
    dx
}
