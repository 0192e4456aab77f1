//! Training loop: deterministic for a fixed seed, one utterance per step.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::data::{generate_synthetic_corpus, stack_superframes, Utterance, Vocab};
use crate::error::{Error, Result};
use crate::layers::SeedRng;
use crate::models::{Model, RnnEncoder};
use crate::numerics::{Tape, Tensor};
use crate::optim::{Sgd, SgdConfig};
use crate::pretrain::{pretrain_encoder, transfer_encoder, PretrainMode};

use super::config::{ExperimentConfig, Family, InitMode};

pub struct TrainOutcome {
    pub model: Model,
    pub loss_curve: Vec<f64>,
    pub pretrain_curve: Vec<f64>,
}

/// Model input features for one utterance under a configuration.
pub fn model_features(cfg: &ExperimentConfig, utt: &Utterance) -> Result<Tensor> {
    match cfg.family {
        Family::TransformerAed => utt.feats.to_tensor(),
        _ => stack_superframes(&utt.feats, cfg.stack)?.to_tensor(),
    }
}

/// One teacher-forced loss evaluation.
pub fn model_loss(
    model: &Model,
    cfg: &ExperimentConfig,
    tape: &Tape,
    utt: &Utterance,
    noise_rng: Option<&mut SeedRng>,
) -> Result<Tensor> {
    let feats = model_features(cfg, utt)?;
    match model {
        Model::Rnnt(m) => m.loss(tape, &feats, &utt.tokens),
        Model::RnnAed(m) => m.teacher_loss(tape, &feats, &utt.tokens, noise_rng),
        Model::TransformerAed(m) => m.loss(tape, &feats, &utt.tokens),
    }
}

pub fn train_on(cfg: &ExperimentConfig, corpus: &[Utterance], vocab: &Vocab) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("train: empty corpus"));
    }
    let model = cfg.build_model(vocab.size())?;
    let mut pretrain_curve = Vec::new();
    if cfg.init != InitMode::Random {
        let Model::Rnnt(rnnt) = &model else {
            return Err(Error::Config("initialization modes apply to the transducer".into()));
        };
        let mut rng = SeedRng::seed_from_u64(cfg.seed ^ 0x696e6974);
        let fresh = RnnEncoder::new(&mut rng, rnnt.encoder.cfg.clone())?;
        let mode = match cfg.init {
            InitMode::Ctc => PretrainMode::Ctc,
            InitMode::Ce => PretrainMode::FrameCe,
            InitMode::Random => unreachable!(),
        };
        let outcome = pretrain_encoder(
            &fresh,
            vocab.size(),
            corpus,
            mode,
            cfg.pretrain_steps,
            cfg.stack,
            SgdConfig {
                lr: cfg.pretrain_lr,
                momentum: cfg.momentum,
                clip_norm: cfg.clip_norm,
            },
            cfg.seed ^ 0x70726531,
        )?;
        pretrain_curve = outcome.loss_curve;
        transfer_encoder(&fresh, rnnt)?;
    }

    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, p)| p).collect();
    let mut opt = Sgd::new(cfg.sgd(), params);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut order_rng = SeedRng::seed_from_u64(cfg.seed ^ 0x73687566);
    let mut noise_rng = SeedRng::seed_from_u64(cfg.seed ^ 0x6e6f6973);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if step % corpus.len() == 0 {
            order.shuffle(&mut order_rng);
        }
        if cfg.lr_decay < 1.0 && cfg.steps > 1 {
            let frac = step as f64 / (cfg.steps - 1) as f64;
            opt.set_lr(cfg.lr * cfg.lr_decay.powf(frac));
        }
        let utt = &corpus[order[step % corpus.len()]];
        let tape = Tape::new();
        let loss = model_loss(&model, cfg, &tape, utt, Some(&mut noise_rng))?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        tape.backward(&loss)?;
        opt.step();
        curve.push(value);
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
        pretrain_curve,
    })
}

/// Generate the configured corpus and train on it.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let spec = cfg.task_spec();
    let vocab = spec.vocab();
    let corpus = generate_synthetic_corpus(&spec, cfg.corpus_utts)?;
    train_on(cfg, &corpus, &vocab)
}
