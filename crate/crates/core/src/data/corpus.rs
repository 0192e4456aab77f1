//! Synthetic toy recognition corpus.
//!
//! Each character token owns a fixed prototype feature vector; an utterance
//! is a word sequence drawn from a small lexicon, rendered frame-by-frame as
//! prototype-plus-noise with an exact frame alignment. The whole corpus is a
//! pure function of (spec, index), so a seed pins it bit-for-bit.

use rand::{Rng, SeedableRng};

use crate::data::vocab::{Vocab, RESERVED};
use crate::error::{Error, Result};
use crate::layers::SeedRng;
use crate::numerics::Tensor;

#[derive(Debug, Clone)]
pub struct FeatureSequence {
    /// Row-major `[len, dim]`.
    pub data: Vec<f64>,
    pub dim: usize,
    pub frame_shift_ms: f64,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(self.data.clone(), &[self.len(), self.dim])
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub feats: FeatureSequence,
    pub transcript: String,
    /// Payload token ids of the transcript.
    pub tokens: Vec<usize>,
    /// Per-frame token id (exact by construction).
    pub alignment: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticTaskSpec {
    pub lexicon: Vec<String>,
    pub words_min: usize,
    pub words_max: usize,
    pub frames_per_token_min: usize,
    pub frames_per_token_max: usize,
    pub feature_dim: usize,
    pub noise_level: f64,
    pub frame_shift_ms: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn default_toy(seed: u64) -> Self {
        SyntheticTaskSpec {
            lexicon: ["go", "stop", "left", "right", "up", "down", "fast", "slow"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            words_min: 2,
            words_max: 3,
            frames_per_token_min: 6,
            frames_per_token_max: 9,
            feature_dim: 8,
            noise_level: 0.1,
            frame_shift_ms: 10.0,
            seed,
        }
    }

    pub fn vocab(&self) -> Vocab {
        let mut chars: Vec<char> = self.lexicon.iter().flat_map(|w| w.chars()).collect();
        chars.push(' ');
        Vocab::from_chars(chars)
    }
}

fn gaussian(rng: &mut SeedRng) -> f64 {
    // Box-Muller; the second variate is discarded for simplicity.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-token prototype vectors, `[payload_size, feature_dim]`.
pub fn token_prototypes(spec: &SyntheticTaskSpec, vocab: &Vocab) -> Vec<f64> {
    let mut rng = SeedRng::seed_from_u64(spec.seed ^ 0x70726f746f);
    (0..vocab.payload_size() * spec.feature_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect()
}

pub fn generate_synthetic_corpus(spec: &SyntheticTaskSpec, n_utts: usize) -> Result<Vec<Utterance>> {
    if n_utts == 0 {
        return Err(Error::Corpus("need at least one utterance".into()));
    }
    if spec.lexicon.is_empty() {
        return Err(Error::Corpus("empty grammar: lexicon has no words".into()));
    }
    if spec.words_min == 0 || spec.words_min > spec.words_max {
        return Err(Error::Corpus("invalid words_min/words_max".into()));
    }
    if spec.frames_per_token_min == 0 || spec.frames_per_token_min > spec.frames_per_token_max {
        return Err(Error::Corpus("invalid frames_per_token range".into()));
    }
    let vocab = spec.vocab();
    let protos = token_prototypes(spec, &vocab);
    let mut out = Vec::with_capacity(n_utts);
    for i in 0..n_utts {
        let mut rng = SeedRng::seed_from_u64(spec.seed ^ (0x75747400 + i as u64));
        let n_words = rng.gen_range(spec.words_min..=spec.words_max);
        let words: Vec<&String> = (0..n_words)
            .map(|_| &spec.lexicon[rng.gen_range(0..spec.lexicon.len())])
            .collect();
        let transcript = words
            .iter()
            .map(|w| w.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let tokens = vocab.tokenize(&transcript)?;
        let mut alignment = Vec::new();
        let mut data = Vec::new();
        for &tok in &tokens {
            let run = rng.gen_range(spec.frames_per_token_min..=spec.frames_per_token_max);
            let proto = &protos[(tok - RESERVED) * spec.feature_dim..(tok - RESERVED + 1) * spec.feature_dim];
            for _ in 0..run {
                alignment.push(tok);
                for &p in proto {
                    data.push(p + spec.noise_level * gaussian(&mut rng));
                }
            }
        }
        out.push(Utterance {
            id: format!("utt{i:04}"),
            feats: FeatureSequence {
                data,
                dim: spec.feature_dim,
                frame_shift_ms: spec.frame_shift_ms,
            },
            transcript,
            tokens,
            alignment,
        });
    }
    Ok(out)
}

/// Stack consecutive frames into super-frames: dim multiplies, length
/// becomes `ceil(T / stack)`, the final partial super-frame is zero padded,
/// and the frame shift multiplies accordingly.
pub fn stack_superframes(x: &FeatureSequence, stack: usize) -> Result<FeatureSequence> {
    if stack == 0 {
        return Err(Error::invalid("stack_superframes: stack must be >= 1"));
    }
    let t = x.len();
    let out_len = t.div_ceil(stack);
    let out_dim = x.dim * stack;
    let mut data = vec![0.0; out_len * out_dim];
    for ot in 0..out_len {
        for s in 0..stack {
            let src = ot * stack + s;
            if src >= t {
                break;
            }
            let dst = ot * out_dim + s * x.dim;
            data[dst..dst + x.dim].copy_from_slice(&x.data[src * x.dim..(src + 1) * x.dim]);
        }
    }
    Ok(FeatureSequence {
        data,
        dim: out_dim,
        frame_shift_ms: x.frame_shift_ms * stack as f64,
    })
}
