//! Differentiable training objectives: lattice losses, frame-level cross
//! entropy and the weighted multi-task combination.

mod ctc;
mod transducer;

pub use ctc::{ctc_loss, CtcLattice};
pub use transducer::{transducer_loss, TransducerLattice, BLANK};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor};

/// Weighting of the auxiliary lattice objective against the attention
/// objective.
#[derive(Debug, Clone, Copy)]
pub struct MultiTaskConfig {
    pub alpha: f64,
}

impl MultiTaskConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("multitask alpha {alpha} outside [0,1]")));
        }
        Ok(MultiTaskConfig { alpha })
    }
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        MultiTaskConfig { alpha: 0.3 }
    }
}

/// `L = -alpha * ctc_ll - (1 - alpha) * att_ll`, both inputs being
/// log-likelihood scalars on the tape.
pub fn multitask_loss(
    tape: &Tape,
    ctc_ll: &Tensor,
    att_ll: &Tensor,
    cfg: MultiTaskConfig,
) -> Result<Tensor> {
    tape.add(
        &tape.scale(ctc_ll, -cfg.alpha)?,
        &tape.scale(att_ll, -(1.0 - cfg.alpha))?,
    )
}

/// Mean over frames of the negative log-probability of each frame's target.
pub fn frame_ce_loss(tape: &Tape, frame_logits: &Tensor, alignment: &[usize]) -> Result<Tensor> {
    let frames = frame_logits.rows();
    if alignment.len() != frames {
        return Err(Error::invalid(format!(
            "frame_ce_loss: {} frames but {} alignment entries",
            frames,
            alignment.len()
        )));
    }
    let classes = frame_logits.cols();
    if let Some(&bad) = alignment.iter().find(|&&k| k >= classes) {
        return Err(Error::invalid(format!(
            "frame_ce_loss: target {bad} outside {classes} classes"
        )));
    }
    let lp = tape.log_softmax(frame_logits)?;
    let picked = tape.gather_rows(&lp, alignment)?;
    tape.scale(&tape.mean_all(&picked)?, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multitask_endpoints_and_default() {
        let tape = Tape::new();
        let ctc = Tensor::scalar(-3.0);
        let att = Tensor::scalar(-5.0);
        let pure_att = multitask_loss(&tape, &ctc, &att, MultiTaskConfig::new(0.0).unwrap())
            .unwrap()
            .item();
        assert_eq!(pure_att, 5.0);
        let pure_ctc = multitask_loss(&tape, &ctc, &att, MultiTaskConfig::new(1.0).unwrap())
            .unwrap()
            .item();
        assert_eq!(pure_ctc, 3.0);
        let mixed = multitask_loss(&tape, &ctc, &att, MultiTaskConfig::default())
            .unwrap()
            .item();
        assert!((mixed - (0.3 * 3.0 + 0.7 * 5.0)).abs() < 1e-12);
        assert!(MultiTaskConfig::new(1.5).is_err());
    }

    #[test]
    fn frame_ce_uniform_logits_give_log_k() {
        let tape = Tape::new();
        let logits = Tensor::from_vec(vec![0.0; 3 * 5], &[3, 5]).unwrap();
        let loss = frame_ce_loss(&tape, &logits, &[0, 3, 4]).unwrap().item();
        assert!((loss - (5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn frame_ce_sharp_logits_drive_loss_to_zero() {
        let tape = Tape::new();
        let mut v = vec![-30.0; 2 * 3];
        v[0] = 30.0; // frame 0 -> class 0
        v[3 + 2] = 30.0; // frame 1 -> class 2
        let logits = Tensor::from_vec(v, &[2, 3]).unwrap();
        let loss = frame_ce_loss(&tape, &logits, &[0, 2]).unwrap().item();
        assert!(loss < 1e-12, "{loss}");
    }

    #[test]
    fn frame_ce_matches_per_frame_hand_computation() {
        let tape = Tape::new();
        let logits = Tensor::from_vec(vec![0.2, -0.4, 1.0, -1.1, 0.3, 0.9], &[2, 3]).unwrap();
        let align = [2usize, 1];
        let loss = frame_ce_loss(&tape, &logits, &align).unwrap().item();
        let mut expect = 0.0;
        let v = logits.to_vec();
        for (t, &k) in align.iter().enumerate() {
            let row = &v[t * 3..(t + 1) * 3];
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            expect += -(row[k] - z.ln());
        }
        expect /= 2.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn frame_ce_length_mismatch_is_error() {
        let tape = Tape::new();
        let logits = Tensor::from_vec(vec![0.0; 6], &[2, 3]).unwrap();
        assert!(frame_ce_loss(&tape, &logits, &[0]).is_err());
    }
}
