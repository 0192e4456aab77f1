//! LSTM building blocks.
//!
//! Two block flavours exist. The standard block runs a plain LSTM cell and
//! applies projection and layer norm to its outputs (the recurrent state
//! keeps the full cell width). The custom block moves both inside the
//! recurrence: gate pre-activations are layer normalized and the hidden
//! state itself is the projected output, which is what lets it use a wider
//! cell at equal state size. The custom gate equations here are our concrete
//! stand-in: per-gate layer norm on the summed pre-activations, projection
//! of the gated output on every step.

use crate::error::{Error, Result};
use crate::layers::common::*;
use crate::numerics::{Tape, Tensor};

/// Bare LSTM recurrence with peephole-free gates, `[i f g o]` packing.
pub struct LstmCell {
    pub input_size: usize,
    pub cell_size: usize,
    w_in: Tensor,  // [input, 4*cell]
    w_rec: Tensor, // [state, 4*cell]
    bias: Tensor,  // [4*cell]
}

#[derive(Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmCell {
    pub fn new(rng: &mut SeedRng, input_size: usize, cell_size: usize) -> Self {
        let mut bias = vec![0.0; 4 * cell_size];
        // Forget gate starts open.
        for b in bias.iter_mut().skip(cell_size).take(cell_size) {
            *b = 1.0;
        }
        LstmCell {
            input_size,
            cell_size,
            w_in: init_matrix(rng, input_size, 4 * cell_size),
            w_rec: init_matrix(rng, cell_size, 4 * cell_size),
            bias: Tensor::param(bias, &[4 * cell_size]).unwrap(),
        }
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: Tensor::zeros(&[self.cell_size]),
            c: Tensor::zeros(&[self.cell_size]),
        }
    }

    pub fn step(&self, tape: &Tape, x: &Tensor, state: &LstmState) -> Result<LstmState> {
        if x.shape() != [self.input_size] {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_size],
            });
        }
        let n = self.cell_size;
        let xm = tape.reshape(x, &[1, self.input_size])?;
        let hm = tape.reshape(&state.h, &[1, n])?;
        let z = tape.add(&tape.matmul(&xm, &self.w_in)?, &tape.matmul(&hm, &self.w_rec)?)?;
        let z = tape.add_row_bias(&z, &self.bias)?;
        let z = tape.reshape(&z, &[4 * n])?;
        let i = tape.sigmoid(&tape.slice_vec(&z, 0, n)?)?;
        let f = tape.sigmoid(&tape.slice_vec(&z, n, 2 * n)?)?;
        let g = tape.tanh(&tape.slice_vec(&z, 2 * n, 3 * n)?)?;
        let o = tape.sigmoid(&tape.slice_vec(&z, 3 * n, 4 * n)?)?;
        let c = tape.add(&tape.mul(&f, &state.c)?, &tape.mul(&i, &g)?)?;
        let h = tape.mul(&o, &tape.tanh(&c)?)?;
        Ok(LstmState { h, c })
    }
}

impl Parameterized for LstmCell {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_param(out, prefix, "w_in", &self.w_in);
        push_param(out, prefix, "w_rec", &self.w_rec);
        push_param(out, prefix, "bias", &self.bias);
    }
}

/// Standard block: LSTM cell, then linear projection, then layer norm.
pub struct LstmBlockStandard {
    pub cell: LstmCell,
    pub proj: Linear,
    pub ln: LayerNorm,
}

impl LstmBlockStandard {
    pub fn new(rng: &mut SeedRng, input: usize, cell_size: usize, proj_size: usize) -> Self {
        LstmBlockStandard {
            cell: LstmCell::new(rng, input, cell_size),
            proj: Linear::new(rng, cell_size, proj_size, true),
            ln: LayerNorm::new(proj_size),
        }
    }

    pub fn output_size(&self) -> usize {
        self.proj.output_size()
    }

    pub fn zero_state(&self) -> LstmState {
        self.cell.zero_state()
    }

    /// One streaming step: returns the block output for this frame plus the
    /// recurrent state to carry forward.
    pub fn step(&self, tape: &Tape, x: &Tensor, state: &LstmState) -> Result<(Tensor, LstmState)> {
        let next = self.cell.step(tape, x, state)?;
        let projected = self.proj.forward_vec(tape, &next.h)?;
        let out = self.ln.forward(tape, &projected)?;
        Ok((out, next))
    }
}

impl Parameterized for LstmBlockStandard {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.cell.collect_params(&format!("{prefix}.cell"), out);
        self.proj.collect_params(&format!("{prefix}.proj"), out);
        self.ln.collect_params(&format!("{prefix}.ln"), out);
    }
}

/// Custom block: layer norm on each gate's pre-activation, projection inside
/// the recurrence. The recurrent hidden state has the projection width.
pub struct LstmBlockCustom {
    pub input_size: usize,
    pub cell_size: usize,
    pub proj_size: usize,
    w_in: Tensor,  // [input, 4*cell]
    w_rec: Tensor, // [proj, 4*cell]
    gate_ln: [LayerNorm; 4],
    proj: Linear,
}

impl LstmBlockCustom {
    pub fn new(rng: &mut SeedRng, input: usize, cell_size: usize, proj_size: usize) -> Self {
        let gate_ln = [
            LayerNorm::new(cell_size),
            LayerNorm::new(cell_size),
            LayerNorm::new(cell_size),
            LayerNorm::new(cell_size),
        ];
        // Forget gate starts open, via the norm's shift term.
        gate_ln[1].beta.set_values(&vec![1.0; cell_size]);
        LstmBlockCustom {
            input_size: input,
            cell_size,
            proj_size,
            w_in: init_matrix(rng, input, 4 * cell_size),
            w_rec: init_matrix(rng, proj_size, 4 * cell_size),
            gate_ln,
            proj: Linear::new(rng, cell_size, proj_size, false),
        }
    }

    pub fn output_size(&self) -> usize {
        self.proj_size
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: Tensor::zeros(&[self.proj_size]),
            c: Tensor::zeros(&[self.cell_size]),
        }
    }

    pub fn step(&self, tape: &Tape, x: &Tensor, state: &LstmState) -> Result<(Tensor, LstmState)> {
        if x.shape() != [self.input_size] {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_size],
            });
        }
        let n = self.cell_size;
        let xm = tape.reshape(x, &[1, self.input_size])?;
        let hm = tape.reshape(&state.h, &[1, self.proj_size])?;
        let z = tape.add(&tape.matmul(&xm, &self.w_in)?, &tape.matmul(&hm, &self.w_rec)?)?;
        let z = tape.reshape(&z, &[4 * n])?;
        let pre: Vec<Tensor> = (0..4)
            .map(|k| {
                let s = tape.slice_vec(&z, k * n, (k + 1) * n)?;
                self.gate_ln[k].forward(tape, &s)
            })
            .collect::<Result<_>>()?;
        let i = tape.sigmoid(&pre[0])?;
        let f = tape.sigmoid(&pre[1])?;
        let g = tape.tanh(&pre[2])?;
        let o = tape.sigmoid(&pre[3])?;
        let c = tape.add(&tape.mul(&f, &state.c)?, &tape.mul(&i, &g)?)?;
        let h = self.proj.forward_vec(tape, &tape.mul(&o, &tape.tanh(&c)?)?)?;
        Ok((h.clone(), LstmState { h, c }))
    }
}

impl Parameterized for LstmBlockCustom {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_param(out, prefix, "w_in", &self.w_in);
        push_param(out, prefix, "w_rec", &self.w_rec);
        for (k, ln) in self.gate_ln.iter().enumerate() {
            ln.collect_params(&format!("{prefix}.gate_ln{k}"), out);
        }
        self.proj.collect_params(&format!("{prefix}.proj"), out);
    }
}

/// Run a cell over a whole sequence, optionally in reverse, returning the
/// raw per-frame hidden states stacked `[T, cell]`.
pub fn run_cell(tape: &Tape, cell: &LstmCell, xs: &Tensor, reverse: bool) -> Result<Tensor> {
    let t_len = xs.rows();
    let mut state = cell.zero_state();
    let mut rows: Vec<Tensor> = Vec::with_capacity(t_len);
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for &t in &order {
        let x = tape.row(xs, t)?;
        state = cell.step(tape, &x, &state)?;
        rows.push(state.h.clone());
    }
    if reverse {
        rows.reverse();
    }
    let refs: Vec<&Tensor> = rows.iter().collect();
    tape.concat_rows(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;

    fn rng() -> SeedRng {
        SeedRng::seed_from_u64(99)
    }

    #[test]
    fn zero_params_zero_state_gives_zero_output() {
        // Keep layer norm gains at their default of one; zero the rest.
        let mut r = rng();
        let std_block = LstmBlockStandard::new(&mut r, 3, 4, 2);
        for (name, p) in std_block.named_params() {
            if !name.contains("ln.gamma") {
                p.set_values(&vec![0.0; p.len()]);
            }
        }
        let tape = Tape::new();
        let x = Tensor::zeros(&[3]);
        let (out, _) = std_block.step(&tape, &x, &std_block.zero_state()).unwrap();
        for v in out.to_vec() {
            assert!(v.abs() < 1e-12);
        }

        let mut r = rng();
        let custom = LstmBlockCustom::new(&mut r, 3, 4, 2);
        for (name, p) in custom.named_params() {
            if !name.contains("gamma") {
                p.set_values(&vec![0.0; p.len()]);
            }
        }
        let tape = Tape::new();
        let (out, _) = custom.step(&tape, &x, &custom.zero_state()).unwrap();
        for v in out.to_vec() {
            assert!(v.abs() < 1e-12, "custom output not exactly zero: {v}");
        }
    }

    #[test]
    fn unrolled_gradient_matches_finite_differences() {
        let mut r = rng();
        let block = LstmBlockStandard::new(&mut r, 3, 4, 3);
        let xs = Tensor::from_vec(uniform(&mut r, 9, 1.0), &[3, 3]).unwrap();
        let params: Vec<Tensor> = block.named_params().into_iter().map(|(_, p)| p).collect();
        let rel = finite_difference_check(
            |tape| {
                let mut state = block.zero_state();
                let mut acc = Tensor::scalar(0.0);
                for t in 0..3 {
                    let x = tape.row(&xs, t)?;
                    let (out, next) = block.step(tape, &x, &state)?;
                    state = next;
                    let s = tape.sum_all(&tape.mul(&out, &out)?)?;
                    acc = tape.add(&acc, &s)?;
                }
                Ok(acc)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(rel <= 1e-5, "standard block rel err {rel}");

        let mut r = rng();
        let block = LstmBlockCustom::new(&mut r, 3, 4, 3);
        let xs = Tensor::from_vec(uniform(&mut r, 9, 1.0), &[3, 3]).unwrap();
        let params: Vec<Tensor> = block.named_params().into_iter().map(|(_, p)| p).collect();
        let rel = finite_difference_check(
            |tape| {
                let mut state = block.zero_state();
                let mut acc = Tensor::scalar(0.0);
                for t in 0..3 {
                    let x = tape.row(&xs, t)?;
                    let (out, next) = block.step(tape, &x, &state)?;
                    state = next;
                    let s = tape.sum_all(&tape.mul(&out, &out)?)?;
                    acc = tape.add(&acc, &s)?;
                }
                Ok(acc)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(rel <= 1e-5, "custom block rel err {rel}");
    }

    #[test]
    fn future_input_does_not_change_past_output() {
        let mut r = rng();
        let block = LstmBlockStandard::new(&mut r, 2, 3, 2);
        let base = uniform(&mut r, 8, 1.0);
        let mut bumped = base.clone();
        bumped[6] += 1.0; // frame 3 of 4
        let run = |data: &[f64]| {
            let xs = Tensor::from_vec(data.to_vec(), &[4, 2]).unwrap();
            let tape = Tape::inference();
            let mut state = block.zero_state();
            let mut outs = Vec::new();
            for t in 0..4 {
                let x = tape.row(&xs, t).unwrap();
                let (out, next) = block.step(&tape, &x, &state).unwrap();
                state = next;
                outs.push(out.to_vec());
            }
            outs
        };
        let a = run(&base);
        let b = run(&bumped);
        for t in 0..3 {
            assert_eq!(a[t], b[t], "frame {t} changed by a future perturbation");
        }
        assert_ne!(a[3], b[3]);
    }
}
