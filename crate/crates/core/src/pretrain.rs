//! Encoder initialization: frame-classifier or lattice pretraining on the
//! encoder alone, plus exact parameter transfer into a transducer.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::data::{stack_superframes, Utterance};
use crate::error::{Error, Result};
use crate::layers::{Linear, Parameterized, SeedRng};
use crate::losses::{ctc_loss, frame_ce_loss};
use crate::models::{RnnEncoder, RnnTransducer};
use crate::numerics::{Tape, Tensor};
use crate::optim::{Sgd, SgdConfig};

/// Split each word's frame span evenly among its pieces; leftover frames go
/// to the earliest pieces. Spans must tile `0..T` in order.
pub fn equal_segmentation_alignment(
    word_spans: &[(String, usize, usize)],
    pieces_per_word: &[Vec<usize>],
) -> Result<Vec<usize>> {
    if word_spans.len() != pieces_per_word.len() {
        return Err(Error::invalid(
            "equal_segmentation: one piece list per word required",
        ));
    }
    let mut out = Vec::new();
    let mut cursor = 0usize;
    for ((word, start, end), pieces) in word_spans.iter().zip(pieces_per_word) {
        if *start != cursor || end <= start {
            return Err(Error::invalid(format!(
                "equal_segmentation: span for {word:?} [{start},{end}) does not tile the utterance"
            )));
        }
        if pieces.is_empty() {
            return Err(Error::invalid(format!("word {word:?} has no pieces")));
        }
        let frames = end - start;
        if frames < pieces.len() {
            return Err(Error::invalid(format!(
                "span too short: word {word:?} has {frames} frames for {} pieces",
                pieces.len()
            )));
        }
        let base = frames / pieces.len();
        let extra = frames % pieces.len();
        for (i, &piece) in pieces.iter().enumerate() {
            let run = base + usize::from(i < extra);
            out.extend(std::iter::repeat(piece).take(run));
        }
        cursor = *end;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMode {
    FrameCe,
    Ctc,
}

pub struct PretrainOutcome {
    /// Per-step loss values.
    pub loss_curve: Vec<f64>,
    /// The auxiliary softmax head (discarded at transfer).
    pub head: Linear,
}

/// Train the encoder in place against an auxiliary frame classifier (needs
/// alignments) or a lattice objective (transcripts only).
pub fn pretrain_encoder(
    encoder: &RnnEncoder,
    vocab_size: usize,
    corpus: &[Utterance],
    mode: PretrainMode,
    steps: usize,
    stack: usize,
    opt_cfg: SgdConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::invalid("pretrain_encoder: empty corpus"));
    }
    let mut rng = SeedRng::seed_from_u64(seed);
    let head = Linear::new(&mut rng, encoder.output_size(), vocab_size, true);
    let mut params = encoder.named_params();
    head.collect_params("head", &mut params);
    let mut opt = Sgd::new(opt_cfg, params.into_iter().map(|(_, p)| p).collect());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        if step % corpus.len() == 0 {
            order.shuffle(&mut rng);
        }
        let utt = &corpus[order[step % corpus.len()]];
        let feats = stack_superframes(&utt.feats, stack)?;
        let x = feats.to_tensor()?;
        let tape = Tape::new();
        let enc_out = encoder.forward(&tape, &x)?;
        let logits = head.forward(&tape, &enc_out)?;
        let loss = match mode {
            PretrainMode::FrameCe => {
                if utt.alignment.is_empty() {
                    return Err(Error::invalid("frame-classifier pretraining needs alignments"));
                }
                // Alignment is at the input frame rate; a super-frame takes
                // the label of its first constituent frame.
                let stacked: Vec<usize> = (0..enc_out.rows())
                    .map(|t| utt.alignment[(t * stack).min(utt.alignment.len() - 1)])
                    .collect();
                frame_ce_loss(&tape, &logits, &stacked)?
            }
            PretrainMode::Ctc => {
                let lp = tape.log_softmax(&logits)?;
                ctc_loss(&tape, &lp, &utt.tokens)?
            }
        };
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        tape.backward(&loss)?;
        opt.step();
        curve.push(value);
    }
    Ok(PretrainOutcome {
        loss_curve: curve,
        head,
    })
}

/// Copy a pretrained encoder's parameters into a transducer whose encoder
/// has the identical architecture. Name or shape mismatches abort with the
/// full offender list; the prediction and joint networks keep their fresh
/// initialization.
pub fn transfer_encoder(source: &RnnEncoder, target: &RnnTransducer) -> Result<()> {
    let src: Vec<(String, Tensor)> = source.named_params();
    let dst: Vec<(String, Tensor)> = target.encoder.named_params();
    let mut problems = Vec::new();
    let src_map: std::collections::BTreeMap<&str, &Tensor> =
        src.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, t) in &dst {
        match src_map.get(name.as_str()) {
            None => problems.push(format!("missing in source: {name}")),
            Some(s) if s.shape() != t.shape() => problems.push(format!(
                "shape mismatch: {name} {:?} vs {:?}",
                s.shape(),
                t.shape()
            )),
            Some(s) => t.set_values(&s.to_vec()),
        }
    }
    let dst_names: std::collections::BTreeSet<&str> = dst.iter().map(|(n, _)| n.as_str()).collect();
    for (name, _) in &src {
        if !dst_names.contains(name.as_str()) {
            problems.push(format!("extra in source: {name}"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Checkpoint(problems.join("; ")))
    }
}
