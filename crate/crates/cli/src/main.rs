//! Command-line front end: corpus generation, training, decoding,
//! evaluation, gradient checking, latency reports and multi-seed
//! comparisons.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use asrlab::data::{generate_synthetic_corpus, read_corpus, write_alignments, write_corpus};
use asrlab::harness::*;
use asrlab::models::{apply_checkpoint, load_checkpoint, save_checkpoint, Model};
use asrlab::numerics::{finite_difference_check, Tensor};
use asrlab::streaming::{encoder_latency_ms, MaskKind};

#[derive(Parser)]
#[command(name = "asrlab", about = "Desk-scale end-to-end speech transduction lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus configured in the experiment file.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint plus its loss curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
    /// Decode a corpus with a trained checkpoint.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file; defaults to regenerating the configured corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
    /// Word error rate of a checkpoint on the configured corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
    /// Finite-difference checks over every layer family.
    Gradcheck {
        #[arg(long, default_value = "11")]
        seed: u64,
    },
    /// Closed-form latency table for the standard configurations.
    LatencyReport {
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
    /// Train each trend configuration over several seeds and tabulate.
    Compare {
        #[arg(long, default_value = "3")]
        seeds: usize,
        #[arg(long, default_value = "600")]
        steps: usize,
        #[arg(long, default_value = "60")]
        utts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: Format,
    },
}

fn emit(path: Option<&Path>, text: &str) -> asrlab::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> asrlab::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_text(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_model(path: &Path) -> asrlab::Result<(ExperimentConfig, Model)> {
    let ckpt = load_checkpoint(path)?;
    let cfg = ExperimentConfig::from_text(&ckpt.config_text)?;
    let spec = cfg.task_spec();
    let model = cfg.build_model(spec.vocab().size())?;
    apply_checkpoint(&model.named_params(), &ckpt)?;
    Ok((cfg, model))
}

fn run() -> asrlab::Result<()> {
    match Cli::parse().command {
        Command::GenCorpus { config, out, seed } => {
            let mut cfg = load_config(&config, None)?;
            if let Some(s) = seed {
                cfg.corpus_seed = s;
            }
            let spec = cfg.task_spec();
            let corpus = generate_synthetic_corpus(&spec, cfg.corpus_utts)?;
            std::fs::create_dir_all(&out)?;
            write_corpus(&out.join("toy.corpus"), &corpus)?;
            write_alignments(&out.join("toy.ali"), &corpus)?;
            println!(
                "wrote {} utterances to {}",
                corpus.len(),
                out.join("toy.corpus").display()
            );
        }
        Command::Train {
            config,
            out,
            seed,
            format,
        } => {
            let cfg = load_config(&config, seed)?;
            let outcome = train(&cfg)?;
            std::fs::create_dir_all(&out)?;
            save_checkpoint(&out.join("model.ckpt"), &cfg.to_text(), &outcome.model.named_params())?;
            match format {
                Format::Tsv => emit(Some(&out.join("loss.tsv")), &loss_curve_tsv(&outcome.loss_curve))?,
                Format::Json => emit(
                    Some(&out.join("loss.json")),
                    &serde_json::to_string_pretty(&outcome.loss_curve).unwrap(),
                )?,
            }
            if !outcome.pretrain_curve.is_empty() {
                emit(Some(&out.join("pretrain_loss.tsv")), &loss_curve_tsv(&outcome.pretrain_curve))?;
            }
            println!("checkpoint written to {}", out.join("model.ckpt").display());
        }
        Command::Decode {
            checkpoint,
            corpus,
            out,
            format,
        } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let spec = cfg.task_spec();
            let vocab = spec.vocab();
            let data = match corpus {
                Some(p) => read_corpus(&p, |s| vocab.tokenize(s))?,
                None => generate_synthetic_corpus(&spec, cfg.corpus_utts)?,
            };
            let eval = evaluate(&model, &cfg, &data, &vocab)?;
            let text = match format {
                Format::Tsv => decode_tsv(&eval.per_utt),
                Format::Json => serde_json::to_string_pretty(&decode_json(&eval.per_utt)).unwrap(),
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Eval {
            checkpoint,
            corpus,
            out,
            format,
        } => {
            let (cfg, model) = load_model(&checkpoint)?;
            let spec = cfg.task_spec();
            let vocab = spec.vocab();
            let data = match corpus {
                Some(p) => read_corpus(&p, |s| vocab.tokenize(s))?,
                None => generate_synthetic_corpus(&spec, cfg.corpus_utts)?,
            };
            let eval = evaluate(&model, &cfg, &data, &vocab)?;
            let text = match format {
                Format::Tsv => format!(
                    "wer\tsub\tdel\tins\tref_words\ttoken_acc\n{:.4}\t{}\t{}\t{}\t{}\t{:.4}\n",
                    eval.wer.wer(),
                    eval.wer.substitutions,
                    eval.wer.deletions,
                    eval.wer.insertions,
                    eval.wer.ref_len,
                    eval.token_accuracy
                ),
                Format::Json => serde_json::to_string_pretty(&serde_json::json!({
                    "wer": eval.wer.wer(),
                    "substitutions": eval.wer.substitutions,
                    "deletions": eval.wer.deletions,
                    "insertions": eval.wer.insertions,
                    "ref_words": eval.wer.ref_len,
                    "token_accuracy": eval.token_accuracy,
                }))
                .unwrap(),
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Gradcheck { seed } => {
            gradcheck(seed)?;
        }
        Command::LatencyReport { format } => {
            let entries = standard_latency_entries();
            let text = match format {
                Format::Tsv => latency_report_tsv(&entries),
                Format::Json => {
                    serde_json::to_string_pretty(&latency_report_json(&entries)).unwrap()
                }
            };
            print!("{text}");
        }
        Command::Compare {
            seeds,
            steps,
            utts,
            out,
            format,
        } => {
            let entries = trend_comparison_set(steps, utts);
            let seed_list: Vec<u64> = (1..=seeds as u64).collect();
            let rows = compare(&entries, &seed_list)?;
            let text = match format {
                Format::Tsv => compare_table_tsv(&rows),
                Format::Json => serde_json::to_string_pretty(&compare_table_json(&rows)).unwrap(),
            };
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn gradcheck(seed: u64) -> asrlab::Result<()> {
    use asrlab::layers::*;
    use rand::SeedableRng;
    let mut rng = SeedRng::seed_from_u64(seed);
    let report = |name: &str, rel: f64| {
        let verdict = if rel <= 1e-4 { "ok" } else { "FAIL" };
        println!("{name}\t{rel:.3e}\t{verdict}");
    };

    let block = LstmBlockStandard::new(&mut rng, 4, 5, 4);
    let xs = Tensor::from_vec(uniform(&mut rng, 12, 1.0), &[3, 4])?;
    let params: Vec<Tensor> = block.named_params().into_iter().map(|(_, p)| p).collect();
    let rel = finite_difference_check(
        |tape| {
            let mut state = block.zero_state();
            let mut acc = Tensor::scalar(0.0);
            for t in 0..3 {
                let x = tape.row(&xs, t)?;
                let (out, next) = block.step(tape, &x, &state)?;
                state = next;
                acc = tape.add(&acc, &tape.sum_all(&tape.mul(&out, &out)?)?)?;
            }
            Ok(acc)
        },
        &params,
        1e-5,
    )?;
    report("lstm-standard", rel);

    let custom = LstmBlockCustom::new(&mut rng, 4, 5, 4);
    let params: Vec<Tensor> = custom.named_params().into_iter().map(|(_, p)| p).collect();
    let rel = finite_difference_check(
        |tape| {
            let mut state = custom.zero_state();
            let mut acc = Tensor::scalar(0.0);
            for t in 0..3 {
                let x = tape.row(&xs, t)?;
                let (out, next) = custom.step(tape, &x, &state)?;
                state = next;
                acc = tape.add(&acc, &tape.sum_all(&tape.mul(&out, &out)?)?)?;
            }
            Ok(acc)
        },
        &params,
        1e-5,
    )?;
    report("lstm-custom", rel);

    let ctx_layer = ContextLayer::new(2, 4);
    let params: Vec<Tensor> = ctx_layer.named_params().into_iter().map(|(_, p)| p).collect();
    let rel = finite_difference_check(
        |tape| {
            let y = ctx_layer.forward(tape, &xs)?;
            tape.sum_all(&tape.mul(&y, &y)?)
        },
        &params,
        1e-5,
    )?;
    report("context-layer", rel);

    let mha = MultiHeadAttention::new(&mut rng, 4, 2, 2);
    let params: Vec<Tensor> = mha.named_params().into_iter().map(|(_, p)| p).collect();
    let allow = vec![true; 9];
    let rel = finite_difference_check(
        |tape| {
            let y = mha.forward(tape, &xs, &xs, &xs, &allow)?;
            tape.sum_all(&tape.mul(&y, &y)?)
        },
        &params,
        1e-5,
    )?;
    report("multi-head-attention", rel);

    let tb = TransformerBlock::encoder(&mut rng, 4, 2, 2, 6);
    let params: Vec<Tensor> = tb.named_params().into_iter().map(|(_, p)| p).collect();
    let rel = finite_difference_check(
        |tape| {
            let y = tb.forward(tape, &xs, &allow, None)?;
            tape.sum_all(&tape.mul(&y, &y)?)
        },
        &params,
        1e-5,
    )?;
    report("transformer-block", rel);

    let vgg = VggFrontend::new(&mut rng, 4, 2, 2);
    let feats = Tensor::from_vec(uniform(&mut rng, 24, 1.0), &[6, 4])?;
    let params: Vec<Tensor> = vgg.named_params().into_iter().map(|(_, p)| p).collect();
    let rel = finite_difference_check(
        |tape| {
            let y = vgg.forward(tape, &feats)?;
            tape.sum_all(&tape.mul(&y, &y)?)
        },
        &params,
        1e-5,
    )?;
    report("vgg-frontend", rel);

    // Keep the latency arithmetic visible here as a quick sanity line.
    let spec = asrlab::streaming::LatencySpec {
        encoder: MaskKind::Lookahead { per_block: 4 },
        blocks: 6,
        frontend_stride: 3,
        frame_shift_ms: 10,
        decoder_extra_ms: 0,
    };
    let l = encoder_latency_ms(&spec).unwrap();
    println!("latency-sanity\t6x4x30ms={}ms\t{}", l.avg_ms, if l.avg_ms == 720 { "ok" } else { "FAIL" });
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
