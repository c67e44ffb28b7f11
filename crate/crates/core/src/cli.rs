//! Command-line front end.
//!
//! A corpus directory holds `source.tsv` and `target.tsv` (plus `roles.tsv`
//! when synthetic). A run directory holds `checkpoint.txt`, `vocab.txt`,
//! `log.tsv`, `word_scores_source.tsv` and `word_scores_target.tsv`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{
    attention_dump, classify_pivots, domain_probe_accuracy, export_representations,
    extract_word_scores, parse_word_scores,
};
use crate::corpus::{generate_synthetic, load_corpus, Corpus, Document, SynthConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::evaluate;
use crate::trainer::{load_checkpoint, log_to_tsv, save_checkpoint, Checkpoint, TrainConfig, Trainer};

pub const SOURCE_FILE: &str = "source.tsv";
pub const TARGET_FILE: &str = "target.tsv";
pub const ROLES_FILE: &str = "roles.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "log.tsv";
pub const SOURCE_SCORES_FILE: &str = "word_scores_source.tsv";
pub const TARGET_SCORES_FILE: &str = "word_scores_target.tsv";

#[derive(Parser, Debug)]
#[command(name = "hagan", about = "Hierarchical-attention adversarial sentiment transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus with its word-role table.
    GenSynth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its log, checkpoint and word scores.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON training config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Paper)]
        preset: Preset,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Turn every adversarial term off.
        #[arg(long)]
        naive: bool,
    },
    /// Report source-test and target-test accuracy of a trained run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Dump per-token attention and per-word scores for one domain.
    ExtractAttention {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = DomainArg::All)]
        domain: DomainArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify words as pivots or non-pivots from a naive run and an adversarial run.
    Pivots {
        #[arg(long)]
        han: PathBuf,
        #[arg(long)]
        hagan: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        high: f64,
        #[arg(long, default_value_t = 0.5)]
        low: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project document representations to 2-D and report a domain probe.
    ExportRepr {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Paper hyperparameters.
    Paper,
    /// Desk-scale synthetic experiment settings.
    Synthetic,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Source,
    Target,
    All,
}

/// Parse `args` (program name first), run the subcommand, and return the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenSynth { seed, out } => gen_synth(seed, &out),
        Command::Train {
            corpus,
            out,
            config,
            preset,
            epochs,
            seed,
            lr,
            batch_size,
            naive,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = read(&path)?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => match preset {
                    Preset::Paper => TrainConfig::default(),
                    Preset::Synthetic => TrainConfig::synthetic(),
                },
            };
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = lr {
                cfg.optimizer.learning_rate = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if naive {
                cfg.weights = LossWeights::naive();
            }
            train(cfg, &corpus, &out)
        }
        Command::Eval { run, corpus } => {
            let (ckpt, corpus) = load_run(&run, &corpus)?;
            let split = corpus.split(ckpt.config.source_test_fraction, ckpt.config.seed)?;
            for (name, docs) in [("source_test", &split.source_test), ("target_test", &split.target_test)] {
                if !docs.is_empty() {
                    println!("{name}\t{}", evaluate(&ckpt.model, docs)?);
                }
            }
            Ok(())
        }
        Command::ExtractAttention {
            run,
            corpus,
            domain,
            out,
        } => {
            let (ckpt, corpus) = load_run(&run, &corpus)?;
            let (source, target) = domain_documents(&corpus);
            let docs = match domain {
                DomainArg::Source => source,
                DomainArg::Target => target,
                DomainArg::All => source.into_iter().chain(target).collect(),
            };
            create_dir(&out)?;
            write(&out.join("attention.tsv"), &attention_dump(&ckpt.model, docs.iter().copied())?)?;
            let scores = extract_word_scores(&ckpt.model, docs)?;
            write(&out.join("word_scores.tsv"), &scores.to_tsv())
        }
        Command::Pivots {
            han,
            hagan,
            high,
            low,
            out,
        } => {
            let han = parse_word_scores(&read(&han.join(SOURCE_SCORES_FILE))?)?;
            let hagan = parse_word_scores(&read(&hagan.join(TARGET_SCORES_FILE))?)?;
            let report = classify_pivots(&han, &hagan, high, low)?.to_tsv();
            match out {
                Some(path) => write(&path, &report),
                None => {
                    print!("{report}");
                    Ok(())
                }
            }
        }
        Command::ExportRepr {
            run,
            corpus,
            seed,
            out,
        } => {
            let (ckpt, corpus) = load_run(&run, &corpus)?;
            let docs: Vec<_> = corpus
                .source_labeled
                .iter()
                .map(|d| (&d.doc, Some(d.sentiment)))
                .chain(corpus.source_unlabeled.iter().map(|d| (d, None)))
                .chain(corpus.target_unlabeled.iter().map(|d| (d, None)))
                .chain(corpus.target_test.iter().map(|d| (&d.doc, Some(d.sentiment))))
                .collect();
            let projection = export_representations(&ckpt.model, &docs, seed)?;
            write(&out, &projection.to_tsv())?;
            let (source, target) = domain_documents(&corpus);
            if source.len() >= 2 && target.len() >= 2 {
                let s = ckpt.model.represent(source)?;
                let t = ckpt.model.represent(target)?;
                println!("domain_probe_acc\t{}", domain_probe_accuracy(&s, &t, seed)?);
            }
            Ok(())
        }
    }
}

fn gen_synth(seed: u64, out: &Path) -> Result<()> {
    let synth = generate_synthetic(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    create_dir(out)?;
    write(&out.join(SOURCE_FILE), &synth.source_tsv)?;
    write(&out.join(TARGET_FILE), &synth.target_tsv)?;
    write(&out.join(ROLES_FILE), &synth.roles_tsv())
}

fn train(config: TrainConfig, corpus_dir: &Path, out: &Path) -> Result<()> {
    config.validate()?;
    let corpus = load_corpus(
        &corpus_dir.join(SOURCE_FILE),
        &corpus_dir.join(TARGET_FILE),
        config.vocab_limit,
    )?;
    let split = corpus.split(config.source_test_fraction, config.seed)?;
    let mut trainer = Trainer::new(config, split.vocab.len())?;
    let report = trainer.run(split.training_view(), split.eval_sets())?;

    create_dir(out)?;
    write(&out.join(LOG_FILE), &log_to_tsv(&report.log))?;
    let mut vocab = split.vocab.tokens().join("\n");
    vocab.push('\n');
    write(&out.join(VOCAB_FILE), &vocab)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &trainer.model, &trainer.config, &trainer.optimizer)?;
    let (source, target) = domain_documents(&corpus);
    for (file, docs) in [(SOURCE_SCORES_FILE, source), (TARGET_SCORES_FILE, target)] {
        if !docs.is_empty() {
            write(&out.join(file), &extract_word_scores(&trainer.model, docs)?.to_tsv())?;
        }
    }
    if let Some(last) = report.log.last() {
        eprintln!("{}", crate::trainer::LOG_HEADER);
        eprintln!("{}", last.to_tsv());
    }
    Ok(())
}

/// Checkpoint of a run plus a corpus mapped through that run's vocabulary.
fn load_run(run: &Path, corpus_dir: &Path) -> Result<(Checkpoint, Corpus)> {
    let ckpt = load_checkpoint(&run.join(CHECKPOINT_FILE))?;
    let tokens = read(&run.join(VOCAB_FILE))?
        .lines()
        .map(str::to_string)
        .collect();
    let vocab = Vocabulary::from_tokens(tokens)?;
    if vocab.len() != ckpt.model.spec.generator.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            ckpt.model.spec.generator.vocab_size
        )));
    }
    let corpus = load_corpus(
        &corpus_dir.join(SOURCE_FILE),
        &corpus_dir.join(TARGET_FILE),
        ckpt.config.vocab_limit,
    )?
    .with_vocab(vocab);
    Ok((ckpt, corpus))
}

/// Every document of each domain, labels dropped.
fn domain_documents(corpus: &Corpus) -> (Vec<&Document>, Vec<&Document>) {
    let source = corpus
        .source_labeled
        .iter()
        .map(|d| &d.doc)
        .chain(&corpus.source_unlabeled)
        .collect();
    let target = corpus
        .target_unlabeled
        .iter()
        .chain(corpus.target_test.iter().map(|d| &d.doc))
        .collect();
    (source, target)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
