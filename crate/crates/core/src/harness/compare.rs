//! Multi-configuration, multi-seed comparison table.

use crate::data::generate_synthetic_corpus;
use crate::error::Result;
use crate::streaming::encoder_latency_ms;

use super::config::{ContextMode, ExperimentConfig, Family, InitMode, TransformerStreaming};
use super::eval::evaluate;
use super::train::train_on;

pub struct CompareEntry {
    pub name: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub seeds: usize,
    pub wer_mean: f64,
    pub wer_std: f64,
    pub token_acc_mean: f64,
    /// Encoder lookahead column; full-utterance for non-streaming rows.
    pub latency: String,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn latency_column(cfg: &ExperimentConfig) -> String {
    match encoder_latency_ms(&cfg.latency_spec()) {
        None => "full utterance".to_string(),
        Some(l) => {
            if l.min_ms == l.max_ms {
                format!("{} ms", l.avg_ms)
            } else {
                format!("{} ms avg [{}, {}]", l.avg_ms, l.min_ms, l.max_ms)
            }
        }
    }
}

/// Train and evaluate every (config, seed) pair on the configured corpus.
pub fn compare(entries: &[CompareEntry], seeds: &[u64]) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut wers = Vec::with_capacity(seeds.len());
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = entry.config.clone();
            cfg.seed = seed;
            let spec = cfg.task_spec();
            let vocab = spec.vocab();
            let corpus = generate_synthetic_corpus(&spec, cfg.corpus_utts)?;
            let out = train_on(&cfg, &corpus, &vocab)?;
            let eval = evaluate(&out.model, &cfg, &corpus, &vocab)?;
            wers.push(eval.wer.wer());
            accs.push(eval.token_accuracy);
        }
        let (wer_mean, wer_std) = mean_std(&wers);
        let (acc_mean, _) = mean_std(&accs);
        rows.push(CompareRow {
            name: entry.name.clone(),
            seeds: seeds.len(),
            wer_mean,
            wer_std,
            token_acc_mean: acc_mean,
            latency: latency_column(&entry.config),
        });
    }
    Ok(rows)
}

/// The qualitative comparisons reported for streaming systems:
/// initialization modes for the transducer, per-block against top-only
/// future context, and chunked against lookahead transformers.
pub fn trend_comparison_set(steps: usize, corpus_utts: usize) -> Vec<CompareEntry> {
    let base = |family: Family| {
        let mut c = ExperimentConfig::default_for(family, true);
        c.steps = steps;
        c.corpus_utts = corpus_utts;
        c
    };
    let mut entries = Vec::new();

    let mut rnnt_plain = base(Family::Rnnt);
    rnnt_plain.context_mode = ContextMode::None;
    entries.push(CompareEntry {
        name: "rnnt-random-no-context".into(),
        config: rnnt_plain,
    });

    entries.push(CompareEntry {
        name: "rnnt-random".into(),
        config: base(Family::Rnnt),
    });

    let mut rnnt_top = base(Family::Rnnt);
    rnnt_top.context_mode = ContextMode::TopOnly;
    entries.push(CompareEntry {
        name: "rnnt-top-only-context".into(),
        config: rnnt_top,
    });

    let mut rnnt_ctc = base(Family::Rnnt);
    rnnt_ctc.init = InitMode::Ctc;
    entries.push(CompareEntry {
        name: "rnnt-ctc-init".into(),
        config: rnnt_ctc,
    });

    let mut rnnt_ce = base(Family::Rnnt);
    rnnt_ce.init = InitMode::Ce;
    entries.push(CompareEntry {
        name: "rnnt-ce-init".into(),
        config: rnnt_ce,
    });

    let mut tfm_chunk = base(Family::TransformerAed);
    tfm_chunk.transformer_streaming = TransformerStreaming::Chunk;
    entries.push(CompareEntry {
        name: "transformer-chunk".into(),
        config: tfm_chunk,
    });

    let mut tfm_look = base(Family::TransformerAed);
    tfm_look.transformer_streaming = TransformerStreaming::Lookahead;
    entries.push(CompareEntry {
        name: "transformer-lookahead".into(),
        config: tfm_look,
    });

    entries
}

pub fn compare_table_tsv(rows: &[CompareRow]) -> String {
    let mut out = String::from("model\tseeds\twer_mean\twer_std\ttoken_acc_mean\tencoder lookahead\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
            r.name, r.seeds, r.wer_mean, r.wer_std, r.token_acc_mean, r.latency
        ));
    }
    out
}

pub fn compare_table_json(rows: &[CompareRow]) -> serde_json::Value {
    serde_json::Value::Array(
        rows.iter()
            .map(|r| {
                serde_json::json!({
                    "model": r.name,
                    "seeds": r.seeds,
                    "wer_mean": r.wer_mean,
                    "wer_std": r.wer_std,
                    "token_acc_mean": r.token_acc_mean,
                    "encoder_lookahead": r.latency,
                })
            })
            .collect(),
    )
}
