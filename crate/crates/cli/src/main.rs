//! `kwsdet` command-line tool.
//!
//! Any configuration key can be overridden on the command line as
//! `--<key> <value>` or `--<key>=<value>` (dashes and underscores are
//! interchangeable), e.g. `kwsdet train --corpus data --out run --epochs 5`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kwsdet::dataset::SynthSpec;
use kwsdet::pipeline::{
    cmd_baseline, cmd_detect, cmd_eval, cmd_gen_data, cmd_train, manifest_config, resolve_config,
    resolve_corpus_config, Ablation, BaselineCommand, DetectCommand, DetectInput, EvalCommand,
    TrainCommand,
};
use kwsdet::trainer::TrainOptions;
use kwsdet::{Error, PipelineConfig, Result};

#[derive(Parser, Debug)]
#[command(name = "kwsdet", version, about = "Anchor-free keyword detection in continuous audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic tone-pattern corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 400)]
        utterances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a detector (or the window classifier with `--ablation cls-head`).
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "none")]
        ablation: String,
        /// Continue from a `last.ckpt` written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the encoded training targets as CSV into this directory.
        #[arg(long)]
        dump_targets: Option<PathBuf>,
        /// Train on the first N training utterances only.
        #[arg(long)]
        limit: Option<usize>,
        /// Stop after N epochs of this invocation.
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run a trained model over a corpus split or WAV files.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// WAV files to process instead of a corpus split.
        #[arg(long, num_args = 1..)]
        audio: Vec<PathBuf>,
        /// Keyword names (one per line) for `--audio` runs.
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Window step in seconds for classifier checkpoints.
        #[arg(long, default_value_t = 0.2)]
        step: f64,
    },
    /// Score detections against a corpus split.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// timing.json written by `detect`, for the RTF column.
        #[arg(long)]
        timing: Option<PathBuf>,
        /// Defaults to the config recorded next to the detections.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sliding-window baseline: tune the step on one split, report on another.
    Baseline {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<f64>>,
        #[arg(long, default_value = "dev")]
        tune_split: String,
        #[arg(long, default_value = "test")]
        test_split: String,
    },
}

type Overrides = Vec<(String, String)>;

/// Removes `--<config-key> value` pairs from `args`.
fn split_overrides(args: &[String]) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        if let Some(flag) = a.strip_prefix("--") {
            let (name, inline) = match flag.split_once('=') {
                Some((n, v)) => (n, Some(v.to_string())),
                None => (flag, None),
            };
            let key = name.replace('-', "_");
            if PipelineConfig::is_key(&key) {
                let value = match inline {
                    Some(v) => v,
                    None => {
                        i += 1;
                        args.get(i)
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?
                    }
                };
                pairs.push((key, value));
                i += 1;
                continue;
            }
        }
        rest.push(a.clone());
        i += 1;
    }
    Ok((rest, pairs))
}

fn run(cli: Cli, overrides: Vec<(String, String)>, argv: Vec<String>) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            classes,
            utterances,
            seed,
        } => {
            let spec = SynthSpec {
                num_keywords: classes,
                utterances,
                ..SynthSpec::default()
            };
            let info = cmd_gen_data(&spec, &out, seed, argv)?;
            println!(
                "{} utterances, {} words, {} keywords; splits {:?}",
                info.utterances, info.words, info.keywords, info.split_sizes
            );
        }
        Command::Train {
            corpus,
            out,
            config,
            seed,
            ablation,
            resume,
            dump_targets,
            limit,
            stop_after,
            quiet,
        } => {
            let ablation: Ablation = ablation.parse()?;
            let mut pairs = overrides;
            pairs.extend(ablation.config_pairs());
            let cfg = resolve_corpus_config(config.as_deref(), &pairs, &corpus)?;
            let cmd = TrainCommand {
                corpus,
                ablation,
                dump_targets,
                opts: TrainOptions {
                    seed,
                    out_dir: out,
                    resume,
                    limit_utterances: limit,
                    stop_after_epochs: stop_after,
                    quiet,
                },
            };
            let s = cmd_train(&cfg, &cmd, argv)?;
            println!(
                "trained {} epochs ({} steps) in {:.1}s; final epoch loss {:.4}",
                s.epochs_completed,
                s.steps,
                s.seconds,
                s.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Detect {
            model,
            out,
            corpus,
            split,
            audio,
            keywords,
            step,
        } => {
            let input = match (corpus, audio.is_empty()) {
                (Some(corpus), true) => DetectInput::Split { corpus, split },
                (None, false) => DetectInput::Files(audio),
                _ => {
                    return Err(Error::InvalidInput(
                        "give either --corpus or --audio".into(),
                    ))
                }
            };
            let cmd = DetectCommand {
                model,
                input,
                out,
                step,
                keywords,
            };
            let (records, timing) = cmd_detect(&overrides, &cmd, argv)?;
            println!(
                "{} detections over {:.1}s of audio (RTF {:.4})",
                records.len(),
                timing.audio_s,
                timing.rtf
            );
        }
        Command::Eval {
            detections,
            corpus,
            split,
            out,
            timing,
            config,
        } => {
            let recorded = match (&config, detections.parent()) {
                (None, Some(dir)) => manifest_config(dir)?,
                _ => None,
            };
            let cfg = match recorded {
                Some(mut cfg) => {
                    for (k, v) in &overrides {
                        cfg.set(k, v)?;
                    }
                    cfg.validate()?;
                    cfg
                }
                None => resolve_corpus_config(config.as_deref(), &overrides, &corpus)?,
            };
            let cmd = EvalCommand {
                detections,
                corpus,
                split,
                timing,
                out,
            };
            let report = cmd_eval(&cfg, &cmd, argv)?;
            print!("{}", report.to_table());
        }
        Command::Baseline {
            model,
            corpus,
            out,
            steps,
            tune_split,
            test_split,
        } => {
            let cmd = BaselineCommand {
                model,
                corpus,
                out,
                steps: steps.unwrap_or_else(BaselineCommand::default_steps),
                tune_split,
                test_split,
            };
            let report = cmd_baseline(&overrides, &cmd, argv)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let (rest, overrides) = match split_overrides(&argv[1..]) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once(argv[0].clone()).chain(rest)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    // Overrides are validated up front so bad values are usage errors.
    if let Err(e) = resolve_config(None, &[]).and_then(|mut c| {
        overrides.iter().try_for_each(|(k, v)| c.set(k, v))
    }) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli, overrides, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
