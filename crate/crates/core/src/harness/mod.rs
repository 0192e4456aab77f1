//! Experiment orchestration: configuration, training, evaluation,
//! comparison tables and report formatting.

mod compare;
mod config;
mod eval;
mod train;

pub use compare::{
    compare, compare_table_json, compare_table_tsv, latency_column, trend_comparison_set,
    CompareEntry, CompareRow,
};
pub use config::{
    ContextMode, ExperimentConfig, Family, InitMode, TransformerStreaming,
};
pub use eval::{evaluate, EvalOutcome, UttResult};
pub use train::{model_features, model_loss, train, train_on, TrainOutcome};

use crate::streaming::encoder_latency_ms;

/// Loss curve as step/loss TSV.
pub fn loss_curve_tsv(curve: &[f64]) -> String {
    let mut out = String::from("step\tloss\n");
    for (i, v) in curve.iter().enumerate() {
        out.push_str(&format!("{i}\t{v:.6}\n"));
    }
    out
}

/// Per-utterance decode report: id, hypothesis, combined log-score and the
/// per-token trigger frames.
pub fn decode_tsv(results: &[UttResult]) -> String {
    let mut out = String::from("utterance\thypothesis\tlog_score\ttrigger_frames\n");
    for r in results {
        let frames = r
            .trigger_frames
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{}\t{}\t{:.4}\t{}\n", r.id, r.hyp_text, r.score, frames));
    }
    out
}

pub fn decode_json(results: &[UttResult]) -> serde_json::Value {
    serde_json::Value::Array(
        results
            .iter()
            .map(|r| {
                serde_json::json!({
                    "utterance": r.id,
                    "hypothesis": r.hyp_text,
                    "log_score": r.score,
                    "trigger_frames": r.trigger_frames,
                })
            })
            .collect(),
    )
}

/// Latency table over a set of named configurations.
pub fn latency_report_tsv(entries: &[(String, ExperimentConfig)]) -> String {
    let mut out = String::from("architecture\tlookahead_frames\ttotal_ms\tavg_ms\trange_ms\tdecoder_extra_ms\n");
    for (name, cfg) in entries {
        match encoder_latency_ms(&cfg.latency_spec()) {
            None => {
                out.push_str(&format!("{name}\tfull\tfull utterance\t-\t-\t0\n"));
            }
            Some(l) => {
                out.push_str(&format!(
                    "{name}\t{}\t{}\t{}\t[{}, {}]\t{}\n",
                    l.encoder_frames, l.max_ms, l.avg_ms, l.min_ms, l.max_ms, l.decoder_extra_ms
                ));
            }
        }
    }
    out
}

pub fn latency_report_json(entries: &[(String, ExperimentConfig)]) -> serde_json::Value {
    serde_json::Value::Array(
        entries
            .iter()
            .map(|(name, cfg)| match encoder_latency_ms(&cfg.latency_spec()) {
                None => serde_json::json!({ "architecture": name, "latency": "full utterance" }),
                Some(l) => serde_json::json!({
                    "architecture": name,
                    "lookahead_frames": l.encoder_frames,
                    "avg_ms": l.avg_ms,
                    "min_ms": l.min_ms,
                    "max_ms": l.max_ms,
                    "decoder_extra_ms": l.decoder_extra_ms,
                }),
            })
            .collect(),
    )
}

/// The three streaming rows whose closed-form lookahead matches at 720 ms,
/// plus the non-streaming baselines.
pub fn standard_latency_entries() -> Vec<(String, ExperimentConfig)> {
    let mut out = Vec::new();
    for family in [Family::Rnnt, Family::RnnAed] {
        let mut cfg = ExperimentConfig::default_for(family, true);
        cfg.enc_blocks = 6;
        cfg.context_lookahead = 4;
        let name = match family {
            Family::Rnnt => "rnnt-context-6x4",
            _ => "rnn-aed-context-6x4",
        };
        out.push((name.to_string(), cfg));
    }
    let mut chunk = ExperimentConfig::default_for(Family::TransformerAed, true);
    chunk.transformer_streaming = TransformerStreaming::Chunk;
    chunk.chunk_frames = 12;
    out.push(("transformer-chunk-480ms".to_string(), chunk));
    let mut look = ExperimentConfig::default_for(Family::TransformerAed, true);
    look.transformer_streaming = TransformerStreaming::Lookahead;
    look.enc_blocks = 18;
    look.dec_blocks = 6;
    look.lookahead_per_block = 1;
    out.push(("transformer-lookahead-18x1".to_string(), look));
    for family in [Family::Rnnt, Family::RnnAed, Family::TransformerAed] {
        let cfg = ExperimentConfig::default_for(family, false);
        let name = match family {
            Family::Rnnt => "rnnt-offline",
            Family::RnnAed => "rnn-aed-offline",
            Family::TransformerAed => "transformer-offline",
        };
        out.push((name.to_string(), cfg));
    }
    out
}
