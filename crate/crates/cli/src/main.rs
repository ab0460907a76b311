mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use mtse::asr_model::AsrModel;
use mtse::datasim::{build_corpus, Corpus, Manifest};
use mtse::dsp::wav::{read_wav, write_wav};
use mtse::dsp::Real;
use mtse::metrics::error_rate;
use mtse::se_model::SeModel;
use mtse::trainer::{
    evaluate, mtl_train, pretrain_asr, pretrain_se, save_step_log, sweep_se_probability, AsrItem, SeTrainData,
    SweepRow, TrainOutcome, TrainSchedule,
};

use config::ExperimentConfig;

/// Speech enhancement trained through a frozen recognizer.
#[derive(Parser, Debug)]
#[command(name = "mtse", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration file (TOML); built-in defaults otherwise
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (output file for enhance)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads for evaluation
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    threads: usize,
    /// Process audio in 64-bit precision instead of 32-bit (verification mode)
    #[arg(long = "f64", global = true)]
    f64: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus into --out
    Simulate,
    /// Pre-train the enhancer on on-the-fly mixtures; writes seed.ckpt
    PretrainSe {
        /// Corpus directory written by simulate
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Iteration count, overriding the configuration
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
    },
    /// Pre-train the recognizer on clean and noisy training audio; writes asr.ckpt
    PretrainAsr {
        /// Corpus directory written by simulate
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Iteration count, overriding the configuration
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
    },
    /// Multi-task fine-tuning of a seed enhancer; writes mtl.ckpt
    MtlTrain {
        /// Corpus directory written by simulate
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Seed enhancer checkpoint
        #[arg(long, value_name = "FILE")]
        se: PathBuf,
        /// Frozen recognizer checkpoint
        #[arg(long, value_name = "FILE")]
        asr: PathBuf,
        /// SE-step probability, overriding the configuration
        #[arg(long, value_name = "P")]
        p: Option<f64>,
        /// Iteration count, overriding the configuration
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
    },
    /// Multi-task fine-tuning for several SE-step probabilities; writes sweep.tsv
    Sweep {
        /// Corpus directory written by simulate
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Seed enhancer checkpoint
        #[arg(long, value_name = "FILE")]
        se: PathBuf,
        /// Frozen recognizer checkpoint
        #[arg(long, value_name = "FILE")]
        asr: PathBuf,
        /// Comma-separated SE-step probabilities, overriding the configuration
        #[arg(long, value_name = "P,..", value_delimiter = ',')]
        p: Option<Vec<f64>>,
        /// Iteration count per probability, overriding the configuration
        #[arg(long, value_name = "N")]
        iterations: Option<usize>,
    },
    /// Enhance one WAV file; --out names the output WAV
    Enhance {
        /// Enhancer checkpoint
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Noisy input WAV
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
    },
    /// Score enhancers on a manifest; prints the report and writes report.tsv
    Evaluate {
        /// Enhancer to score as NAME=CHECKPOINT (repeatable)
        #[arg(long, value_name = "NAME=FILE")]
        se: Vec<String>,
        /// Frozen recognizer checkpoint
        #[arg(long, value_name = "FILE")]
        asr: PathBuf,
        /// Manifest of the utterances to score
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
    },
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, msg).exit()
}

fn out_dir(g: &Global) -> Result<&Path> {
    let Some(out) = g.out.as_deref() else {
        usage_error("--out is required for this subcommand");
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

/// Records the effective configuration next to the outputs.
fn record(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = out.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn save_outcome(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    save_step_log(out.join("steps.tsv"), &outcome.steps)?;
    if !outcome.validation.is_empty() {
        let mut text = String::from("iteration\tvalidation_loss\n");
        for (it, l) in &outcome.validation {
            text.push_str(&format!("{it}\t{l:.6e}\n"));
        }
        std::fs::write(out.join("validation.tsv"), text)?;
    }
    Ok(())
}

fn with_iterations(s: &TrainSchedule, iterations: Option<usize>) -> TrainSchedule {
    TrainSchedule {
        iterations: iterations.unwrap_or(s.iterations),
        ..s.clone()
    }
}

fn open_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::open(dir).with_context(|| format!("opening corpus {}", dir.display()))
}

fn load_asr(path: &Path) -> Result<AsrModel> {
    AsrModel::load(path).with_context(|| format!("loading recognizer {}", path.display()))
}

fn load_se(path: &Path) -> Result<SeModel> {
    SeModel::load(path).with_context(|| format!("loading enhancer {}", path.display()))
}

fn enhance_file<T: Real>(model: &SeModel, input: &Path, output: &Path) -> Result<()> {
    let noisy = read_wav::<T>(input).with_context(|| format!("reading {}", input.display()))?;
    let est = model.enhance(&noisy)?;
    write_wav(output, &est).with_context(|| format!("writing {}", output.display()))
}

fn token_error_rate(asr: &AsrModel, m: &Manifest) -> Result<f64> {
    let (mut edits, mut refs) = (0, 0);
    for item in AsrItem::load_manifest(m)? {
        let hyp = asr.decode_greedy(&item.audio)?;
        edits += error_rate(&item.tokens, &hyp.tokens)?.1.total();
        refs += item.tokens.content().len();
    }
    Ok(100.0 * edits as f64 / refs.max(1) as f64)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if g.threads == 0 {
        usage_error("--threads must be at least 1");
    }
    let cfg = ExperimentConfig::load(g.config.as_deref(), g.seed)?;
    match &cli.command {
        Command::Simulate => {
            let out = out_dir(g)?;
            let corpus = build_corpus(&cfg.corpus, cfg.seed, out)?;
            log::info!(
                "wrote {} training and {} test utterances to {}",
                corpus.train_clean.len(),
                corpus.test_clean.len(),
                out.display()
            );
        }
        Command::PretrainSe { corpus, iterations } => {
            let out = out_dir(g)?;
            record(out, &cfg)?;
            let corpus = open_corpus(corpus)?;
            let data = SeTrainData::from_corpus(&corpus)?;
            let mut model = SeModel::build(cfg.se_model.clone(), cfg.seed)?;
            log::info!("enhancer with {} parameters", model.param_count());
            let sched = with_iterations(&cfg.se_training, *iterations);
            let outcome = pretrain_se(&mut model, &data, &sched, Some(out))?;
            model.save(out.join("seed.ckpt"))?;
            save_outcome(out, &outcome)?;
        }
        Command::PretrainAsr { corpus, iterations } => {
            let out = out_dir(g)?;
            record(out, &cfg)?;
            let corpus = open_corpus(corpus)?;
            let mut items = AsrItem::load_manifest(&corpus.train_clean)?;
            items.extend(AsrItem::load_manifest(&corpus.train_noisy)?);
            let mut model = AsrModel::build(cfg.asr_model.clone(), corpus.vocab.clone(), cfg.seed)?;
            log::info!("recognizer with {} parameters", model.param_count());
            let sched = with_iterations(&cfg.asr_training, *iterations);
            let outcome = pretrain_asr(&mut model, &items, &sched)?;
            model.save(out.join("asr.ckpt"))?;
            save_outcome(out, &outcome)?;
            log::info!("clean test TER {:.2}%", token_error_rate(&model, &corpus.test_clean)?);
        }
        Command::MtlTrain {
            corpus,
            se,
            asr,
            p,
            iterations,
        } => {
            let out = out_dir(g)?;
            let mut cfg = cfg.clone();
            cfg.mtl_training.se_step_probability = p.unwrap_or(cfg.mtl_training.se_step_probability);
            cfg.mtl_training.iterations = iterations.unwrap_or(cfg.mtl_training.iterations);
            record(out, &cfg)?;
            let corpus = open_corpus(corpus)?;
            let data = SeTrainData::from_corpus(&corpus)?;
            let items = AsrItem::load_manifest(&corpus.train_noisy)?;
            let asr = load_asr(asr)?;
            let mut model = load_se(se)?;
            let outcome = mtl_train(&mut model, &asr, &data, &items, &cfg.mtl_training, Some(out))?;
            model.save(out.join("mtl.ckpt"))?;
            save_outcome(out, &outcome)?;
        }
        Command::Sweep {
            corpus,
            se,
            asr,
            p,
            iterations,
        } => {
            let out = out_dir(g)?;
            let mut cfg = cfg.clone();
            if let Some(p) = p {
                cfg.sweep.probabilities = p.clone();
            }
            cfg.mtl_training.iterations = iterations.unwrap_or(cfg.mtl_training.iterations);
            record(out, &cfg)?;
            let corpus = open_corpus(corpus)?;
            let data = SeTrainData::from_corpus(&corpus)?;
            let items = AsrItem::load_manifest(&corpus.train_noisy)?;
            let asr = load_asr(asr)?;
            let seed = load_se(se)?;
            let (rows, _) = sweep_se_probability(
                &cfg.sweep.probabilities,
                &seed,
                &asr,
                &data,
                &items,
                &corpus.test_noisy,
                &cfg.mtl_training,
                Some(out),
                g.threads,
            )?;
            let table = SweepRow::tsv(&rows);
            std::fs::write(out.join("sweep.tsv"), &table)?;
            print!("{table}");
        }
        Command::Enhance { model, input } => {
            let Some(output) = g.out.as_deref() else {
                usage_error("--out is required for enhance");
            };
            let model = load_se(model)?;
            if g.f64 {
                enhance_file::<f64>(&model, input, output)?;
            } else {
                enhance_file::<f32>(&model, input, output)?;
            }
        }
        Command::Evaluate { se, asr, manifest } => {
            let mut systems = Vec::new();
            for spec in se {
                let Some((name, path)) = spec.split_once('=') else {
                    usage_error(format!("--se expects NAME=CHECKPOINT, got {spec}"));
                };
                if name.is_empty() {
                    usage_error(format!("--se {spec} has an empty name"));
                }
                systems.push((name.to_string(), load_se(Path::new(path))?));
            }
            let asr = load_asr(asr)?;
            let m = Manifest::load(manifest, asr.vocab()).with_context(|| format!("loading {}", manifest.display()))?;
            let refs: Vec<(&str, &SeModel)> = systems.iter().map(|(n, s)| (n.as_str(), s)).collect();
            let report = if g.f64 {
                evaluate::<f64>(&refs, &asr, &m, g.threads)?
            } else {
                evaluate::<f32>(&refs, &asr, &m, g.threads)?
            };
            if let Some(out) = g.out.as_deref() {
                std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
                report.save(out.join("report.tsv"))?;
            }
            print!("{}", report.summary_tsv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTSE_LOG", "info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(mtse::error::Error::Diverged { last_good: Some(p), .. }) = e.downcast_ref() {
                eprintln!("last good checkpoint: {}", p.display());
            }
            ExitCode::from(1)
        }
    }
}
