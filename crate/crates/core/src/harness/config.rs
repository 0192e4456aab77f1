//! Experiment configuration: a flat `key = value` text format, schema
//! validated with unknown keys rejected, serializable back to text so a
//! checkpoint can embed the exact configuration it was trained with.

use std::collections::BTreeMap;

use crate::data::SyntheticTaskSpec;
use crate::error::{Error, Result};
use crate::layers::SeedRng;
use crate::losses::MultiTaskConfig;
use crate::models::*;
use crate::optim::SgdConfig;
use crate::streaming::{LatencySpec, MaskKind};
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Rnnt,
    RnnAed,
    TransformerAed,
}

impl Family {
    fn as_str(&self) -> &'static str {
        match self {
            Family::Rnnt => "rnnt",
            Family::RnnAed => "rnn-aed",
            Family::TransformerAed => "transformer-aed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    Ctc,
    Ce,
}

impl InitMode {
    fn as_str(&self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::Ctc => "ctc",
            InitMode::Ce => "ce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformerStreaming {
    Chunk,
    Lookahead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    None,
    PerBlock,
    TopOnly,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: Family,
    pub streaming: bool,
    pub seed: u64,
    // Shared encoder/decoder sizes.
    pub embed_dim: usize,
    pub enc_blocks: usize,
    pub enc_cell: usize,
    pub enc_proj: usize,
    pub custom_lstm: bool,
    // Transducer-specific.
    pub pred_blocks: usize,
    pub pred_cell: usize,
    pub pred_proj: usize,
    pub joint_hidden: usize,
    // Recurrent attention decoder.
    pub dec_blocks: usize,
    pub dec_cell: usize,
    pub dec_proj: usize,
    pub att_dim: usize,
    pub loc_kernel: usize,
    pub loc_filters: usize,
    pub mocha_window: usize,
    pub mocha_noise_std: f64,
    pub mocha_mass_anchor: f64,
    // Transformer dims.
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub vgg_c1: usize,
    pub vgg_c2: usize,
    // Streaming future-context knobs.
    pub context_mode: ContextMode,
    pub context_lookahead: usize,
    pub transformer_streaming: TransformerStreaming,
    pub chunk_frames: usize,
    pub lookahead_per_block: usize,
    // Objectives and decoding.
    pub multitask_alpha: f64,
    pub beta1: f64,
    pub beam: usize,
    pub top_k: usize,
    pub max_len: usize,
    // Optimization.
    pub steps: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by exponential
    /// decay over the step budget.
    pub lr_decay: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub init: InitMode,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    // Data.
    pub corpus_seed: u64,
    pub corpus_utts: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub frames_per_token_min: usize,
    pub frames_per_token_max: usize,
    pub noise_level: f64,
    pub feature_dim: usize,
    pub stack: usize,
}

impl ExperimentConfig {
    pub fn default_for(family: Family, streaming: bool) -> Self {
        ExperimentConfig {
            family,
            streaming,
            seed: 1,
            embed_dim: 16,
            enc_blocks: 2,
            enc_cell: 32,
            enc_proj: 32,
            custom_lstm: false,
            pred_blocks: 1,
            pred_cell: 32,
            pred_proj: 32,
            joint_hidden: 32,
            dec_blocks: 1,
            dec_cell: 32,
            dec_proj: 32,
            att_dim: 32,
            loc_kernel: 15,
            loc_filters: 8,
            mocha_window: 4,
            mocha_noise_std: 1.0,
            mocha_mass_anchor: 1.0,
            model_dim: 32,
            heads: 4,
            head_dim: 8,
            ff_dim: 64,
            vgg_c1: 4,
            vgg_c2: 8,
            context_mode: if streaming && family != Family::TransformerAed {
                ContextMode::PerBlock
            } else {
                ContextMode::None
            },
            context_lookahead: 4,
            transformer_streaming: TransformerStreaming::Chunk,
            chunk_frames: 8,
            lookahead_per_block: 1,
            multitask_alpha: 0.3,
            beta1: 0.3,
            beam: 4,
            top_k: 4,
            max_len: 40,
            steps: 1500,
            lr: 0.05,
            lr_decay: 0.1,
            momentum: 0.9,
            clip_norm: 5.0,
            init: InitMode::Random,
            pretrain_steps: 400,
            pretrain_lr: 0.03,
            corpus_seed: 17,
            corpus_utts: 200,
            words_min: 2,
            words_max: 3,
            frames_per_token_min: 6,
            frames_per_token_max: 9,
            noise_level: 0.1,
            feature_dim: 8,
            stack: 3,
        }
    }

    pub fn task_spec(&self) -> SyntheticTaskSpec {
        let mut spec = SyntheticTaskSpec::default_toy(self.corpus_seed);
        spec.words_min = self.words_min;
        spec.words_max = self.words_max;
        spec.frames_per_token_min = self.frames_per_token_min;
        spec.frames_per_token_max = self.frames_per_token_max;
        spec.noise_level = self.noise_level;
        spec.feature_dim = self.feature_dim;
        spec
    }

    fn context_placement(&self) -> ContextPlacement {
        if !self.streaming {
            return ContextPlacement::None;
        }
        match self.context_mode {
            ContextMode::None => ContextPlacement::None,
            ContextMode::PerBlock => ContextPlacement::PerBlock {
                lookahead: self.context_lookahead,
            },
            ContextMode::TopOnly => ContextPlacement::TopOnly {
                // Same total budget as the per-block allocation.
                lookahead: self.context_lookahead * self.enc_blocks,
            },
        }
    }

    fn rnn_encoder_config(&self) -> RnnEncoderConfig {
        RnnEncoderConfig {
            input_dim: self.feature_dim * self.stack,
            blocks: self.enc_blocks,
            cell_size: self.enc_cell,
            proj_size: self.enc_proj,
            bidirectional: !self.streaming,
            custom_lstm: self.custom_lstm,
            context: self.context_placement(),
        }
    }

    pub fn transformer_mask(&self) -> MaskKind {
        if !self.streaming {
            MaskKind::Full
        } else {
            match self.transformer_streaming {
                TransformerStreaming::Chunk => MaskKind::Chunk {
                    chunk_frames: self.chunk_frames,
                },
                TransformerStreaming::Lookahead => MaskKind::Lookahead {
                    per_block: self.lookahead_per_block,
                },
            }
        }
    }

    pub fn build_model(&self, vocab_size: usize) -> Result<Model> {
        let mut rng = SeedRng::seed_from_u64(self.seed);
        Ok(match self.family {
            Family::Rnnt => Model::Rnnt(RnnTransducer::new(
                &mut rng,
                RnntConfig {
                    vocab_size,
                    encoder: self.rnn_encoder_config(),
                    embed_dim: self.embed_dim,
                    pred_blocks: self.pred_blocks,
                    pred_cell: self.pred_cell,
                    pred_proj: self.pred_proj,
                    joint_hidden: self.joint_hidden,
                },
            )?),
            Family::RnnAed => Model::RnnAed(RnnAttentionEncDec::new(
                &mut rng,
                RnnAedConfig {
                    vocab_size,
                    encoder: self.rnn_encoder_config(),
                    embed_dim: self.embed_dim,
                    dec_blocks: self.dec_blocks,
                    dec_cell: self.dec_cell,
                    dec_proj: self.dec_proj,
                    att_dim: self.att_dim,
                    loc_kernel: self.loc_kernel,
                    loc_filters: self.loc_filters,
                    attention: if self.streaming {
                        AedAttentionKind::Mocha {
                            window: self.mocha_window,
                            noise_std: self.mocha_noise_std,
                            mass_anchor: self.mocha_mass_anchor,
                        }
                    } else {
                        AedAttentionKind::SoftLocation
                    },
                },
            )?),
            Family::TransformerAed => Model::TransformerAed(TransformerAed::new(
                &mut rng,
                TransformerAedConfig {
                    vocab_size,
                    feat_dim: self.feature_dim,
                    vgg_channels: (self.vgg_c1, self.vgg_c2),
                    enc_blocks: self.enc_blocks,
                    dec_blocks: self.dec_blocks,
                    model_dim: self.model_dim,
                    heads: self.heads,
                    head_dim: self.head_dim,
                    ff_dim: self.ff_dim,
                    mask: self.transformer_mask(),
                    multitask: MultiTaskConfig::new(self.multitask_alpha)?,
                },
            )?),
        })
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
        }
    }

    /// Declared latency of this configuration, for reports and the
    /// causality suite.
    pub fn latency_spec(&self) -> LatencySpec {
        let frame_shift_ms = 10;
        match self.family {
            Family::Rnnt | Family::RnnAed => {
                let encoder = if !self.streaming {
                    MaskKind::Full
                } else {
                    match self.context_placement() {
                        ContextPlacement::None => MaskKind::Lookahead { per_block: 0 },
                        ContextPlacement::PerBlock { lookahead } => {
                            MaskKind::Lookahead { per_block: lookahead }
                        }
                        ContextPlacement::TopOnly { lookahead } => {
                            // One window on one block.
                            return LatencySpec {
                                encoder: MaskKind::Lookahead { per_block: lookahead },
                                blocks: 1,
                                frontend_stride: self.stack,
                                frame_shift_ms,
                                decoder_extra_ms: 0,
                            };
                        }
                    }
                };
                LatencySpec {
                    encoder,
                    blocks: self.enc_blocks,
                    frontend_stride: self.stack,
                    frame_shift_ms,
                    decoder_extra_ms: 0,
                }
            }
            Family::TransformerAed => {
                let encoder = self.transformer_mask();
                let decoder_extra_ms = match encoder {
                    MaskKind::Lookahead { per_block } => {
                        (self.dec_blocks * per_block * 4 * frame_shift_ms as usize) as u32
                    }
                    _ => 0,
                };
                LatencySpec {
                    encoder,
                    blocks: self.enc_blocks,
                    frontend_stride: 4,
                    frame_shift_ms,
                    decoder_extra_ms,
                }
            }
        }
    }

    fn to_map(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("family", self.family.as_str().to_string());
        m.insert("streaming", self.streaming.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("embed_dim", self.embed_dim.to_string());
        m.insert("enc_blocks", self.enc_blocks.to_string());
        m.insert("enc_cell", self.enc_cell.to_string());
        m.insert("enc_proj", self.enc_proj.to_string());
        m.insert("custom_lstm", self.custom_lstm.to_string());
        m.insert("pred_blocks", self.pred_blocks.to_string());
        m.insert("pred_cell", self.pred_cell.to_string());
        m.insert("pred_proj", self.pred_proj.to_string());
        m.insert("joint_hidden", self.joint_hidden.to_string());
        m.insert("dec_blocks", self.dec_blocks.to_string());
        m.insert("dec_cell", self.dec_cell.to_string());
        m.insert("dec_proj", self.dec_proj.to_string());
        m.insert("att_dim", self.att_dim.to_string());
        m.insert("loc_kernel", self.loc_kernel.to_string());
        m.insert("loc_filters", self.loc_filters.to_string());
        m.insert("mocha_window", self.mocha_window.to_string());
        m.insert("mocha_noise_std", self.mocha_noise_std.to_string());
        m.insert("mocha_mass_anchor", self.mocha_mass_anchor.to_string());
        m.insert("model_dim", self.model_dim.to_string());
        m.insert("heads", self.heads.to_string());
        m.insert("head_dim", self.head_dim.to_string());
        m.insert("ff_dim", self.ff_dim.to_string());
        m.insert("vgg_c1", self.vgg_c1.to_string());
        m.insert("vgg_c2", self.vgg_c2.to_string());
        m.insert(
            "context_mode",
            match self.context_mode {
                ContextMode::None => "none",
                ContextMode::PerBlock => "per-block",
                ContextMode::TopOnly => "top-only",
            }
            .to_string(),
        );
        m.insert("context_lookahead", self.context_lookahead.to_string());
        m.insert(
            "transformer_streaming",
            match self.transformer_streaming {
                TransformerStreaming::Chunk => "chunk",
                TransformerStreaming::Lookahead => "lookahead",
            }
            .to_string(),
        );
        m.insert("chunk_frames", self.chunk_frames.to_string());
        m.insert("lookahead_per_block", self.lookahead_per_block.to_string());
        m.insert("multitask_alpha", self.multitask_alpha.to_string());
        m.insert("beta1", self.beta1.to_string());
        m.insert("beam", self.beam.to_string());
        m.insert("top_k", self.top_k.to_string());
        m.insert("max_len", self.max_len.to_string());
        m.insert("steps", self.steps.to_string());
        m.insert("lr", self.lr.to_string());
        m.insert("lr_decay", self.lr_decay.to_string());
        m.insert("momentum", self.momentum.to_string());
        m.insert("clip_norm", self.clip_norm.to_string());
        m.insert("init", self.init.as_str().to_string());
        m.insert("pretrain_steps", self.pretrain_steps.to_string());
        m.insert("pretrain_lr", self.pretrain_lr.to_string());
        m.insert("corpus_seed", self.corpus_seed.to_string());
        m.insert("corpus_utts", self.corpus_utts.to_string());
        m.insert("words_min", self.words_min.to_string());
        m.insert("words_max", self.words_max.to_string());
        m.insert("frames_per_token_min", self.frames_per_token_min.to_string());
        m.insert("frames_per_token_max", self.frames_per_token_max.to_string());
        m.insert("noise_level", self.noise_level.to_string());
        m.insert("feature_dim", self.feature_dim.to_string());
        m.insert("stack", self.stack.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = k.trim().to_string();
            if pairs.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
        }
        let family = match pairs.remove("family").as_deref() {
            Some("rnnt") => Family::Rnnt,
            Some("rnn-aed") => Family::RnnAed,
            Some("transformer-aed") => Family::TransformerAed,
            Some(other) => return Err(Error::Config(format!("unknown family {other:?}"))),
            None => return Err(Error::Config("missing key: family".into())),
        };
        let streaming = match pairs.remove("streaming").as_deref() {
            Some("true") => true,
            Some("false") => false,
            Some(other) => return Err(Error::Config(format!("streaming must be true/false, got {other:?}"))),
            None => false,
        };
        let mut cfg = ExperimentConfig::default_for(family, streaming);

        fn take<T: std::str::FromStr>(
            pairs: &mut BTreeMap<String, String>,
            key: &str,
            slot: &mut T,
        ) -> Result<()> {
            if let Some(v) = pairs.remove(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))?;
            }
            Ok(())
        }

        take(&mut pairs, "seed", &mut cfg.seed)?;
        take(&mut pairs, "embed_dim", &mut cfg.embed_dim)?;
        take(&mut pairs, "enc_blocks", &mut cfg.enc_blocks)?;
        take(&mut pairs, "enc_cell", &mut cfg.enc_cell)?;
        take(&mut pairs, "enc_proj", &mut cfg.enc_proj)?;
        take(&mut pairs, "custom_lstm", &mut cfg.custom_lstm)?;
        take(&mut pairs, "pred_blocks", &mut cfg.pred_blocks)?;
        take(&mut pairs, "pred_cell", &mut cfg.pred_cell)?;
        take(&mut pairs, "pred_proj", &mut cfg.pred_proj)?;
        take(&mut pairs, "joint_hidden", &mut cfg.joint_hidden)?;
        take(&mut pairs, "dec_blocks", &mut cfg.dec_blocks)?;
        take(&mut pairs, "dec_cell", &mut cfg.dec_cell)?;
        take(&mut pairs, "dec_proj", &mut cfg.dec_proj)?;
        take(&mut pairs, "att_dim", &mut cfg.att_dim)?;
        take(&mut pairs, "loc_kernel", &mut cfg.loc_kernel)?;
        take(&mut pairs, "loc_filters", &mut cfg.loc_filters)?;
        take(&mut pairs, "mocha_window", &mut cfg.mocha_window)?;
        take(&mut pairs, "mocha_noise_std", &mut cfg.mocha_noise_std)?;
        take(&mut pairs, "mocha_mass_anchor", &mut cfg.mocha_mass_anchor)?;
        take(&mut pairs, "model_dim", &mut cfg.model_dim)?;
        take(&mut pairs, "heads", &mut cfg.heads)?;
        take(&mut pairs, "head_dim", &mut cfg.head_dim)?;
        take(&mut pairs, "ff_dim", &mut cfg.ff_dim)?;
        take(&mut pairs, "vgg_c1", &mut cfg.vgg_c1)?;
        take(&mut pairs, "vgg_c2", &mut cfg.vgg_c2)?;
        if let Some(v) = pairs.remove("context_mode") {
            cfg.context_mode = match v.as_str() {
                "none" => ContextMode::None,
                "per-block" => ContextMode::PerBlock,
                "top-only" => ContextMode::TopOnly,
                other => return Err(Error::Config(format!("unknown context_mode {other:?}"))),
            };
        }
        take(&mut pairs, "context_lookahead", &mut cfg.context_lookahead)?;
        if let Some(v) = pairs.remove("transformer_streaming") {
            cfg.transformer_streaming = match v.as_str() {
                "chunk" => TransformerStreaming::Chunk,
                "lookahead" => TransformerStreaming::Lookahead,
                other => {
                    return Err(Error::Config(format!(
                        "unknown transformer_streaming {other:?}"
                    )))
                }
            };
        }
        take(&mut pairs, "chunk_frames", &mut cfg.chunk_frames)?;
        take(&mut pairs, "lookahead_per_block", &mut cfg.lookahead_per_block)?;
        take(&mut pairs, "multitask_alpha", &mut cfg.multitask_alpha)?;
        take(&mut pairs, "beta1", &mut cfg.beta1)?;
        take(&mut pairs, "beam", &mut cfg.beam)?;
        take(&mut pairs, "top_k", &mut cfg.top_k)?;
        take(&mut pairs, "max_len", &mut cfg.max_len)?;
        take(&mut pairs, "steps", &mut cfg.steps)?;
        take(&mut pairs, "lr", &mut cfg.lr)?;
        take(&mut pairs, "lr_decay", &mut cfg.lr_decay)?;
        take(&mut pairs, "momentum", &mut cfg.momentum)?;
        take(&mut pairs, "clip_norm", &mut cfg.clip_norm)?;
        if let Some(v) = pairs.remove("init") {
            cfg.init = match v.as_str() {
                "random" => InitMode::Random,
                "ctc" => InitMode::Ctc,
                "ce" => InitMode::Ce,
                other => return Err(Error::Config(format!("unknown init {other:?}"))),
            };
        }
        take(&mut pairs, "pretrain_steps", &mut cfg.pretrain_steps)?;
        take(&mut pairs, "pretrain_lr", &mut cfg.pretrain_lr)?;
        take(&mut pairs, "corpus_seed", &mut cfg.corpus_seed)?;
        take(&mut pairs, "corpus_utts", &mut cfg.corpus_utts)?;
        take(&mut pairs, "words_min", &mut cfg.words_min)?;
        take(&mut pairs, "words_max", &mut cfg.words_max)?;
        take(&mut pairs, "frames_per_token_min", &mut cfg.frames_per_token_min)?;
        take(&mut pairs, "frames_per_token_max", &mut cfg.frames_per_token_max)?;
        take(&mut pairs, "noise_level", &mut cfg.noise_level)?;
        take(&mut pairs, "feature_dim", &mut cfg.feature_dim)?;
        take(&mut pairs, "stack", &mut cfg.stack)?;

        if let Some(unknown) = pairs.keys().next() {
            return Err(Error::Config(format!("unknown key: {unknown}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.multitask_alpha) {
            return Err(Error::Config("multitask_alpha outside [0,1]".into()));
        }
        if self.beam == 0 || self.top_k == 0 {
            return Err(Error::Config("beam and top_k must be >= 1".into()));
        }
        if self.init != InitMode::Random && self.family != Family::Rnnt {
            return Err(Error::Config(
                "lattice/classifier initialization applies to the transducer family only".into(),
            ));
        }
        if self.mocha_window == 0 {
            return Err(Error::Config("mocha_window must be >= 1".into()));
        }
        if self.stack == 0 {
            return Err(Error::Config("stack must be >= 1".into()));
        }
        if self.loc_kernel % 2 == 0 {
            return Err(Error::Config("loc_kernel must be odd".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_is_identity() {
        let mut cfg = ExperimentConfig::default_for(Family::TransformerAed, true);
        cfg.chunk_frames = 12;
        cfg.seed = 99;
        let text = cfg.to_text();
        let back = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "family = rnnt\nbogus_key = 3\n";
        let err = ExperimentConfig::from_text(text).unwrap_err().to_string();
        assert!(err.contains("unknown key: bogus_key"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(ExperimentConfig::from_text("family = rnnt\nsteps = banana\n").is_err());
        assert!(ExperimentConfig::from_text("family = hybrid\n").is_err());
        assert!(ExperimentConfig::from_text("family = rnn-aed\ninit = ce\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# toy run\nfamily = rnnt\n\nseed = 5 # fixed\n";
        let cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.seed, 5);
    }
}
