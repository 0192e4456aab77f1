//! Transducer model: acoustic encoder, label-history prediction network and
//! the feed-forward joint network producing the `(t, u)` log-probability
//! grid.

use crate::data::SOS;
use crate::error::{Error, Result};
use crate::layers::*;
use crate::losses::transducer_loss;
use crate::models::encoder::{RnnEncoder, RnnEncoderConfig};
use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct RnntConfig {
    pub vocab_size: usize,
    pub encoder: RnnEncoderConfig,
    pub embed_dim: usize,
    pub pred_blocks: usize,
    pub pred_cell: usize,
    pub pred_proj: usize,
    pub joint_hidden: usize,
}

/// Autoregressive network over previously emitted non-blank labels only.
pub struct PredictionNet {
    embed: Embedding,
    blocks: Vec<LstmBlockStandard>,
}

pub struct PredState(pub Vec<LstmState>);

impl PredictionNet {
    fn new(rng: &mut SeedRng, cfg: &RnntConfig) -> Self {
        let mut blocks = Vec::with_capacity(cfg.pred_blocks);
        for i in 0..cfg.pred_blocks {
            let input = if i == 0 { cfg.embed_dim } else { cfg.pred_proj };
            blocks.push(LstmBlockStandard::new(rng, input, cfg.pred_cell, cfg.pred_proj));
        }
        PredictionNet {
            embed: Embedding::new(rng, cfg.vocab_size, cfg.embed_dim),
            blocks,
        }
    }

    pub fn zero_state(&self) -> PredState {
        PredState(self.blocks.iter().map(|b| b.zero_state()).collect())
    }

    /// Advance by one label, returning the new top-level output.
    pub fn step(&self, tape: &Tape, token: usize, state: &PredState) -> Result<(Tensor, PredState)> {
        let mut x = self.embed.lookup(tape, token)?;
        let mut next = Vec::with_capacity(self.blocks.len());
        for (block, st) in self.blocks.iter().zip(&state.0) {
            let (out, ns) = block.step(tape, &x, st)?;
            next.push(ns);
            x = out;
        }
        Ok((x, PredState(next)))
    }

    /// States for rows `u = 0..=U`: row 0 is conditioned on the start symbol
    /// only, row `u` additionally on `targets[..u]`.
    pub fn forward_rows(&self, tape: &Tape, targets: &[usize]) -> Result<Tensor> {
        let mut state = self.zero_state();
        let mut rows = Vec::with_capacity(targets.len() + 1);
        let (out, next) = self.step(tape, SOS, &state)?;
        rows.push(out);
        state = next;
        for &y in targets {
            let (out, next) = self.step(tape, y, &state)?;
            rows.push(out);
            state = next;
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        tape.concat_rows(&refs)
    }
}

impl Parameterized for PredictionNet {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.embed.collect_params(&format!("{prefix}.embed"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&format!("{prefix}.block{i}"), out);
        }
    }
}

/// Feed-forward combination of one encoder frame and one prediction row.
pub struct JointNet {
    enc_proj: Linear,
    pred_proj: Linear,
    out: Linear,
}

impl JointNet {
    fn new(rng: &mut SeedRng, cfg: &RnntConfig) -> Self {
        JointNet {
            enc_proj: Linear::new(rng, cfg.encoder.proj_size, cfg.joint_hidden, true),
            pred_proj: Linear::new(rng, cfg.pred_proj, cfg.joint_hidden, false),
            out: Linear::new(rng, cfg.joint_hidden, cfg.vocab_size, true),
        }
    }

    /// Full grid `[T, U+1, V]` of log-probabilities.
    pub fn grid(&self, tape: &Tape, enc: &Tensor, pred: &Tensor) -> Result<Tensor> {
        let t_len = enc.rows();
        let u_len = pred.rows();
        let a = self.enc_proj.forward(tape, enc)?;
        let b = self.pred_proj.forward(tape, pred)?;
        let mut cells = Vec::with_capacity(t_len * u_len);
        for t in 0..t_len {
            let at = tape.row(&a, t)?;
            for u in 0..u_len {
                let bu = tape.row(&b, u)?;
                cells.push(tape.add(&at, &bu)?);
            }
        }
        let refs: Vec<&Tensor> = cells.iter().collect();
        let hidden = tape.tanh(&tape.concat_rows(&refs)?)?;
        let logits = self.out.forward(tape, &hidden)?;
        let logp = tape.log_softmax(&logits)?;
        tape.reshape(&logp, &[t_len, u_len, self.out.output_size()])
    }

    /// One cell's log-probabilities, for decoding.
    pub fn single(&self, tape: &Tape, enc_row: &Tensor, pred_row: &Tensor) -> Result<Tensor> {
        let a = self.enc_proj.forward_vec(tape, enc_row)?;
        let b = self.pred_proj.forward_vec(tape, pred_row)?;
        let hidden = tape.tanh(&tape.add(&a, &b)?)?;
        let logits = self.out.forward_vec(tape, &hidden)?;
        tape.log_softmax(&logits)
    }
}

impl Parameterized for JointNet {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.enc_proj.collect_params(&format!("{prefix}.enc"), out);
        self.pred_proj.collect_params(&format!("{prefix}.pred"), out);
        self.out.collect_params(&format!("{prefix}.out"), out);
    }
}

pub struct RnnTransducer {
    pub cfg: RnntConfig,
    pub encoder: RnnEncoder,
    pub prediction: PredictionNet,
    pub joint: JointNet,
}

impl RnnTransducer {
    pub fn new(rng: &mut SeedRng, cfg: RnntConfig) -> Result<Self> {
        let encoder = RnnEncoder::new(rng, cfg.encoder.clone())?;
        let prediction = PredictionNet::new(rng, &cfg);
        let joint = JointNet::new(rng, &cfg);
        Ok(RnnTransducer {
            cfg,
            encoder,
            prediction,
            joint,
        })
    }

    /// Teacher-forced grid of log-probabilities over the symbol inventory.
    pub fn forward_grid(&self, tape: &Tape, feats: &Tensor, targets: &[usize]) -> Result<Tensor> {
        if targets.iter().any(|&y| y >= self.cfg.vocab_size) {
            return Err(Error::invalid("rnnt_forward: target id out of range"));
        }
        let enc = self.encoder.forward(tape, feats)?;
        let pred = self.prediction.forward_rows(tape, targets)?;
        self.joint.grid(tape, &enc, &pred)
    }

    /// Per-utterance transducer loss.
    pub fn loss(&self, tape: &Tape, feats: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let grid = self.forward_grid(tape, feats, targets)?;
        transducer_loss(tape, &grid, targets)
    }
}

impl Parameterized for RnnTransducer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        self.encoder.collect_params(&p("encoder"), out);
        self.prediction.collect_params(&p("prediction"), out);
        self.joint.collect_params(&p("joint"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::encoder::ContextPlacement;
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;

    pub(crate) fn tiny_config(vocab: usize) -> RnntConfig {
        RnntConfig {
            vocab_size: vocab,
            encoder: RnnEncoderConfig {
                input_dim: 3,
                blocks: 1,
                cell_size: 4,
                proj_size: 3,
                bidirectional: false,
                custom_lstm: false,
                context: ContextPlacement::None,
            },
            embed_dim: 3,
            pred_blocks: 1,
            pred_cell: 4,
            pred_proj: 3,
            joint_hidden: 4,
        }
    }

    #[test]
    fn empty_target_grid_shape() {
        let mut rng = SeedRng::seed_from_u64(61);
        let model = RnnTransducer::new(&mut rng, tiny_config(6)).unwrap();
        let feats = Tensor::from_vec(uniform(&mut rng, 12, 1.0), &[4, 3]).unwrap();
        let tape = Tape::inference();
        let grid = model.forward_grid(&tape, &feats, &[]).unwrap();
        assert_eq!(grid.shape(), &[4, 1, 6]);
    }

    #[test]
    fn grid_cell_ignores_future_labels() {
        let mut rng = SeedRng::seed_from_u64(62);
        let model = RnnTransducer::new(&mut rng, tiny_config(6)).unwrap();
        let feats = Tensor::from_vec(uniform(&mut rng, 9, 1.0), &[3, 3]).unwrap();
        let tape = Tape::inference();
        let a = model.forward_grid(&tape, &feats, &[3, 4, 5]).unwrap().to_vec();
        let b = model.forward_grid(&tape, &feats, &[3, 4, 3]).unwrap().to_vec();
        // Rows u=0..2 (conditioned on at most the first two labels) agree;
        // row 3 differs because its conditioning label changed.
        let row = 6; // vocab entries per (t,u) cell
        for t in 0..3 {
            for u in 0..3 {
                let base = (t * 4 + u) * row;
                assert_eq!(a[base..base + row], b[base..base + row], "t={t} u={u}");
            }
        }
        let changed = (0..3).any(|t| {
            let base = (t * 4 + 3) * row;
            a[base..base + row] != b[base..base + row]
        });
        assert!(changed);
    }

    #[test]
    fn full_model_gradient_check() {
        let mut rng = SeedRng::seed_from_u64(63);
        let model = RnnTransducer::new(&mut rng, tiny_config(5)).unwrap();
        let feats = Tensor::from_vec(uniform(&mut rng, 9, 1.0), &[3, 3]).unwrap();
        let targets = [3usize, 4];
        let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, p)| p).collect();
        let rel = finite_difference_check(
            |tape| model.loss(tape, &feats, &targets),
            &params,
            1e-5,
        )
        .unwrap();
        assert!(rel <= 1e-4, "rel err {rel}");
    }
}
