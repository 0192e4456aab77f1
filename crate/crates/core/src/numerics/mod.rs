//! Minimal dense-tensor arithmetic with reverse-mode automatic
//! differentiation, all in double precision.

mod conv;
mod tape;
mod tensor;

pub use tape::{BackCtx, Tape};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Stable `log(sum(exp(xs)))`. `-inf` entries are absorbing identities
/// (exact zero probability); an empty input is an error.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("logsumexp of empty input"));
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Two-argument form used heavily by lattice recursions.
pub fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Compare analytic gradients against central finite differences.
///
/// `f` must rebuild its computation from the current parameter values each
/// call; it is evaluated twice up front and an error is returned if the two
/// values differ (non-deterministic function). Returns the maximum over all
/// parameter coordinates of
/// `|analytic - central| / max(|analytic|, |central|, 1e-12)`.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::invalid(format!(
            "epsilon {} outside (0, 1e-3]",
            epsilon
        )));
    }
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape)?;
    if loss.len() != 1 {
        return Err(Error::invalid("finite_difference_check: loss not scalar"));
    }
    let base = loss.item();
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let eval = |t: &Tape| -> Result<f64> { Ok(f(t)?.item()) };
    let second = eval(&Tape::inference())?;
    if second.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second,
        });
    }

    let mut max_rel = 0.0f64;
    for (p, grad) in params.iter().zip(&analytic) {
        let orig = p.to_vec();
        let mut work = orig.clone();
        for i in 0..orig.len() {
            work[i] = orig[i] + epsilon;
            p.set_values(&work);
            let up = eval(&Tape::inference())?;
            work[i] = orig[i] - epsilon;
            p.set_values(&work);
            let down = eval(&Tape::inference())?;
            work[i] = orig[i];
            let cd = (up - down) / (2.0 * epsilon);
            let a = grad[i];
            let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        p.set_values(&orig);
    }
    Ok(max_rel)
}
