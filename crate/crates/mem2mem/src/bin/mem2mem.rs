//! Thin command-line front end; all behavior lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mem2mem::commands;
use mem2mem::config::{AblationFlags, RunConfig};

#[derive(Parser)]
#[command(name = "mem2mem", version, about = "Memory-to-memory hierarchical summarizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a JSON-lines corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory (checkpoint, vocab, metrics).
        #[arg(long)]
        out: PathBuf,
        /// Flat key/value config file; CLI flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Start from the small desk-scale preset instead of full-size defaults.
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda_comp: Option<f64>,
        #[arg(long)]
        lambda_read: Option<f64>,
        /// Model variant: baseline, encoder-mem, decoder-mem, mem-transfer,
        /// reg-comp, or full.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Beam-decode summaries for a corpus.
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Score summaries against references (ROUGE + copy ratios).
    Evaluate {
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Write the full JSON report here (stdout gets the corpus means).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump memory attention matrices and the implicit extraction.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        doc: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a marked-salient synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        docs: usize,
        #[arg(long, default_value_t = 12)]
        sentences: usize,
        #[arg(long, default_value_t = 3)]
        salient: usize,
        #[arg(long, default_value_t = 60)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn ablation_by_name(name: &str) -> Result<AblationFlags, String> {
    let ladder = AblationFlags::ladder();
    let idx = match name {
        "baseline" => 0,
        "encoder-mem" => 1,
        "decoder-mem" => 2,
        "mem-transfer" => 3,
        "reg-comp" => 4,
        "full" => 5,
        other => return Err(format!("unknown ablation `{other}`")),
    };
    Ok(ladder[idx])
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            corpus,
            out,
            config,
            resume,
            desk,
            epochs,
            batch_size,
            lr,
            seed,
            lambda_comp,
            lambda_read,
            ablation,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_file(&path).map_err(|e| e.to_string())?,
                None if desk => RunConfig::desk(),
                None => RunConfig::default(),
            };
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = lr {
                cfg.lr = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = lambda_comp {
                cfg.lambda_comp = v;
            }
            if let Some(v) = lambda_read {
                cfg.lambda_read = v;
            }
            if let Some(name) = ablation {
                cfg.ablation = ablation_by_name(&name)?;
            }
            let outcome = commands::cmd_train(cfg, &corpus, &out, resume.as_deref(), |m| {
                println!(
                    "step={} epoch={} nll={:.6} comp={:.6} read={:.6} total={:.6} acc={:.4}",
                    m.step, m.epoch, m.nll, m.comp, m.read, m.total, m.token_acc
                );
            })
            .map_err(|e| e.to_string())?;
            println!("checkpoint: {}", outcome.checkpoint_path.display());
            Ok(())
        }
        Command::Summarize { checkpoint, corpus, out, beam } => {
            let lines = commands::cmd_summarize(&checkpoint, &corpus, &out, beam)
                .map_err(|e| e.to_string())?;
            println!("wrote {} summaries to {}", lines.len(), out.display());
            Ok(())
        }
        Command::Evaluate { summaries, references, out } => {
            let report = commands::cmd_evaluate(&summaries, &references, out.as_deref())
                .map_err(|e| e.to_string())?;
            let c = &report.corpus;
            println!(
                "rouge1={:.4} rouge2={:.4} rougeL={:.4} docs={}",
                c.rouge.rouge1.f,
                c.rouge.rouge2.f,
                c.rouge.rouge_l.f,
                report.per_document.len()
            );
            Ok(())
        }
        Command::Inspect { checkpoint, corpus, doc, out } => {
            let insp = commands::cmd_inspect(&checkpoint, &corpus, doc, &out)
                .map_err(|e| e.to_string())?;
            println!(
                "heads={} sentences={} max_offdiag={:.6}",
                insp.heads, insp.sentences, insp.max_offdiag
            );
            println!("extraction: {:?}", insp.extraction.sentence_indices);
            println!("wrote {}", insp.attention_path.display());
            println!("wrote {}", insp.psi_path.display());
            println!("wrote {}", insp.extraction_path.display());
            Ok(())
        }
        Command::Synth { out, docs, sentences, salient, vocab_size, seed } => {
            commands::cmd_synth(&out, docs, sentences, salient, vocab_size, seed)
                .map_err(|e| e.to_string())?;
            println!("wrote {docs} documents to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
