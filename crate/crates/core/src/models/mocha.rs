//! Monotonic chunkwise attention.
//!
//! A scalar selection energy per encoder frame parameterizes a Bernoulli
//! trigger; decoding thresholds it while scanning left to right from the
//! previous boundary, then applies soft attention over a fixed lookback
//! window ending at the boundary. Training cannot backpropagate through the
//! sampling, so it uses the closed-form expectation of the context vector
//! under the trigger distribution; probability mass that never triggers is
//! dropped.

use crate::error::{Error, Result};
use crate::layers::*;
use crate::numerics::{Tape, Tensor};

/// Expected context vector and boundary distribution given per-frame
/// selection and chunk energies.
///
/// `prev_boundary` is the previous output step's boundary distribution
/// (entries may sum to less than one once mass has escaped past the end).
/// Returns the context vector `[enc_dim]` and this step's boundary
/// distribution `[T]`.
pub fn mocha_expected_attention(
    tape: &Tape,
    enc: &Tensor,
    select_energies: &Tensor,
    chunk_energies: &Tensor,
    prev_boundary: &Tensor,
    window: usize,
) -> Result<(Tensor, Tensor)> {
    let t_len = enc.rows();
    if select_energies.shape() != [t_len]
        || chunk_energies.shape() != [t_len]
        || prev_boundary.shape() != [t_len]
    {
        return Err(Error::invalid(
            "mocha_expected_attention: energies/boundary must be [T] vectors",
        ));
    }
    if window == 0 {
        return Err(Error::invalid("mocha_expected_attention: window must be >= 1"));
    }
    let p_sel = tape.sigmoid(select_energies)?;
    let one = Tensor::scalar(1.0);

    // Boundary recursion: mass arriving at frame t is what survived from
    // t-1 plus what the previous step left exactly here.
    let mut alpha_parts: Vec<Tensor> = Vec::with_capacity(t_len);
    let mut carry: Option<Tensor> = None; // q_{t-1}
    for t in 0..t_len {
        let arrived = tape.slice_vec(prev_boundary, t, t + 1)?;
        let q_t = match carry {
            None => arrived,
            Some(q_prev) => {
                let p_prev = tape.slice_vec(&p_sel, t - 1, t)?;
                let survive = tape.sub(&one, &p_prev)?;
                tape.add(&tape.mul(&survive, &q_prev)?, &arrived)?
            }
        };
        let p_t = tape.slice_vec(&p_sel, t, t + 1)?;
        alpha_parts.push(tape.mul(&p_t, &q_t)?);
        carry = Some(q_t);
    }
    let refs: Vec<&Tensor> = alpha_parts.iter().collect();
    let boundary = tape.concat_cols(&refs)?;

    // Expected chunkwise attention: each boundary k spreads its mass over
    // the window [k-window+1, k] with softmax weights of the chunk energies.
    let mut beta: Option<Tensor> = None;
    for k in 0..t_len {
        let lo = k.saturating_sub(window - 1);
        let win = tape.slice_vec(chunk_energies, lo, k + 1)?;
        let sm = tape.softmax(&win)?;
        let a_k = tape.slice_vec(&boundary, k, k + 1)?;
        let weighted = tape.mul_scalar_t(&sm, &a_k)?;
        let mut parts: Vec<Tensor> = Vec::new();
        if lo > 0 {
            parts.push(Tensor::zeros(&[lo]));
        }
        parts.push(weighted);
        if k + 1 < t_len {
            parts.push(Tensor::zeros(&[t_len - k - 1]));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let padded = tape.concat_cols(&refs)?;
        beta = Some(match beta {
            Some(b) => tape.add(&b, &padded)?,
            None => padded,
        });
    }
    let beta = beta.expect("t_len >= 1");
    let row = tape.reshape(&beta, &[1, t_len])?;
    let context = tape.reshape(&tape.matmul(&row, enc)?, &[enc.cols()])?;
    Ok((context, boundary))
}

/// Hard decoding step: scan from `start`, trigger where the selection
/// probability crosses one half, attend over the lookback window. Returns
/// `None` when no frame triggers (the decoder should stop).
pub fn mocha_hard_attend(
    tape: &Tape,
    enc: &Tensor,
    select_energy_values: &[f64],
    chunk_energies: &Tensor,
    start: usize,
    window: usize,
) -> Result<Option<(Tensor, usize)>> {
    let t_len = enc.rows();
    let boundary = (start..t_len).find(|&t| select_energy_values[t] >= 0.0);
    let Some(b) = boundary else {
        return Ok(None);
    };
    let lo = b.saturating_sub(window - 1);
    let win = tape.slice_vec(chunk_energies, lo, b + 1)?;
    let sm = tape.softmax(&win)?;
    let rows = tape.slice_rows(enc, lo, b + 1)?;
    let w = tape.reshape(&sm, &[1, b + 1 - lo])?;
    let context = tape.reshape(&tape.matmul(&w, &rows)?, &[enc.cols()])?;
    Ok(Some((context, b)))
}

/// Energy heads shared by training and decoding.
///
/// Both heads use the normalized parameterization
/// `e = g * v.tanh(Wq q + Wk h + b) / ||v|| + r`: the scalar gain and
/// offset keep energies near zero at initialization and stop the selection
/// sigmoid from saturating into a dead zone while the encoder is still
/// forming.
pub struct MochaAttention {
    pub window: usize,
    pub noise_std: f64,
    select_query: Linear,
    select_key: Linear,
    select_score: Tensor,
    select_gain: Tensor,
    select_offset: Tensor,
    chunk_query: Linear,
    chunk_key: Linear,
    chunk_score: Tensor,
    chunk_gain: Tensor,
}

impl MochaAttention {
    pub fn new(
        rng: &mut SeedRng,
        enc_dim: usize,
        query_dim: usize,
        att_dim: usize,
        window: usize,
        noise_std: f64,
    ) -> Self {
        let scale = 1.0 / (att_dim as f64).sqrt();
        // The chunk softmax is invariant to uniform energy shifts, so the
        // chunk head carries no offset; the selection sigmoid is not
        // shift-invariant and keeps one.
        MochaAttention {
            window,
            noise_std,
            select_query: Linear::new(rng, query_dim, att_dim, false),
            select_key: Linear::new(rng, enc_dim, att_dim, true),
            select_score: Tensor::param(uniform(rng, att_dim, scale), &[att_dim]).unwrap(),
            select_gain: Tensor::param(vec![scale.sqrt()], &[1]).unwrap(),
            select_offset: Tensor::param(vec![1.5], &[1]).unwrap(),
            chunk_query: Linear::new(rng, query_dim, att_dim, false),
            chunk_key: Linear::new(rng, enc_dim, att_dim, false),
            chunk_score: Tensor::param(uniform(rng, att_dim, scale), &[att_dim]).unwrap(),
            chunk_gain: Tensor::param(vec![1.0], &[1]).unwrap(),
        }
    }

    /// Precompute key projections for one utterance.
    pub fn keys(&self, tape: &Tape, enc: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((
            self.select_key.forward(tape, enc)?,
            self.chunk_key.forward(tape, enc)?,
        ))
    }

    fn energies(
        &self,
        tape: &Tape,
        keys: &Tensor,
        query: &Tensor,
        query_proj: &Linear,
        score: &Tensor,
        gain: &Tensor,
    ) -> Result<Tensor> {
        let q = query_proj.forward_vec(tape, query)?;
        let e = tape.tanh(&tape.add_row_bias(keys, &q)?)?;
        let v = tape.reshape(score, &[score.len(), 1])?;
        let raw = tape.reshape(&tape.matmul(&e, &v)?, &[keys.rows()])?;
        let norm = tape.sqrt(&tape.dot(score, score)?)?;
        tape.div_scalar_t(&tape.mul_scalar_t(&raw, gain)?, &norm)
    }

    pub fn select_energies(
        &self,
        tape: &Tape,
        select_keys: &Tensor,
        query: &Tensor,
        noise: Option<&[f64]>,
    ) -> Result<Tensor> {
        let mut e = self.energies(
            tape,
            select_keys,
            query,
            &self.select_query,
            &self.select_score,
            &self.select_gain,
        )?;
        e = tape.add_scalar_t(&e, &self.select_offset)?;
        if let Some(n) = noise {
            let nt = Tensor::from_vec(n.to_vec(), &[e.len()])?;
            e = tape.add(&e, &nt)?;
        }
        Ok(e)
    }

    pub fn chunk_energies(&self, tape: &Tape, chunk_keys: &Tensor, query: &Tensor) -> Result<Tensor> {
        self.energies(
            tape,
            chunk_keys,
            query,
            &self.chunk_query,
            &self.chunk_score,
            &self.chunk_gain,
        )
    }

    /// Expected attention for one decoder step during training.
    pub fn expected(
        &self,
        tape: &Tape,
        enc: &Tensor,
        keys: &(Tensor, Tensor),
        query: &Tensor,
        prev_boundary: &Tensor,
        noise: Option<&[f64]>,
    ) -> Result<(Tensor, Tensor)> {
        let sel = self.select_energies(tape, &keys.0, query, noise)?;
        let chk = self.chunk_energies(tape, &keys.1, query)?;
        mocha_expected_attention(tape, enc, &sel, &chk, prev_boundary, self.window)
    }
}

impl Parameterized for MochaAttention {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.select_query.collect_params(&format!("{prefix}.sel_q"), out);
        self.select_key.collect_params(&format!("{prefix}.sel_k"), out);
        push_param(out, prefix, "sel_score", &self.select_score);
        push_param(out, prefix, "sel_gain", &self.select_gain);
        push_param(out, prefix, "sel_offset", &self.select_offset);
        self.chunk_query.collect_params(&format!("{prefix}.chunk_q"), out);
        self.chunk_key.collect_params(&format!("{prefix}.chunk_k"), out);
        push_param(out, prefix, "chunk_score", &self.chunk_score);
        push_param(out, prefix, "chunk_gain", &self.chunk_gain);
    }
}
