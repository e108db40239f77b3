use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use factorspan::config::{Criterion, SplitName};
use factorspan::{CliError, Pipeline, RunConfig};
use factorspan_core::genclient::PromptKind;
use factorspan_model::ModelKind;

#[derive(Parser)]
#[command(name = "factorspan", version, about = "Span-level extraction of clinical factors from notes")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run stages even when their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce synthetic notes for one prompt kind.
    Generate {
        #[arg(long, default_value = "standard")]
        prompt_kind: PromptKind,
        #[arg(long)]
        n: Option<usize>,
        /// Replay the fixture corpus instead of calling the endpoint.
        #[arg(long)]
        offline: bool,
    },
    /// Split notes into sentences and extract inline annotations.
    Parse,
    /// Per-label diversity statistics.
    Analyze,
    /// Splits, class weights and tokenizer vocabulary.
    Build,
    /// Train one model; resumes from the last finished epoch.
    Train {
        #[arg(long)]
        model: ModelKind,
    },
    /// Score a trained model against gold annotations and the all-sentinel baseline.
    Evaluate {
        #[arg(long)]
        model: ModelKind,
        /// `label_set` or `span_overlap`.
        #[arg(long)]
        criterion: Option<Criterion>,
        #[arg(long)]
        overlap_threshold: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        collapsed: bool,
        #[arg(long)]
        split: Option<SplitName>,
        /// `best` or `final`.
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Label new sentences with a trained model.
    Extract {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
    /// Every stage for every model.
    Run {
        #[arg(long)]
        offline: bool,
    },
}

fn run(cli: Cli) -> factorspan::Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let p = Pipeline::new(cfg).with_force(cli.force);
    log::debug!("run {} config {}", p.run_dir.display(), p.config_hash);
    match cli.command {
        Command::Generate { prompt_kind, n, offline } => {
            p.generate(prompt_kind, n, offline)?;
        }
        Command::Parse => {
            p.parse()?;
        }
        Command::Analyze => {
            p.analyze()?;
        }
        Command::Build => {
            p.build()?;
        }
        Command::Train { model } => {
            p.train(model)?;
        }
        Command::Evaluate { model, criterion, overlap_threshold, tau, collapsed, split, checkpoint } => {
            let mut e = p.cfg.eval.clone();
            if let Some(c) = criterion {
                e.criterion = c;
            }
            if let Some(t) = overlap_threshold {
                e.overlap_threshold = t;
            }
            if let Some(t) = tau {
                e.tau = t;
            }
            e.collapsed |= collapsed;
            if let Some(s) = split {
                e.split = s;
            }
            match checkpoint.as_deref() {
                None => {}
                Some("best") => e.use_best = true,
                Some("final") => e.use_best = false,
                Some(other) => return Err(CliError::config(format!("--checkpoint must be best or final, not {other:?}"))),
            }
            e.validate()?;
            let (_, ev) = p.evaluate(model, &e)?;
            println!("{}", ev.dir.join("report.txt").display());
            println!("macro-F1 {:.4}  baseline {:.4}", ev.report.macro_f1(), ev.baseline.macro_f1());
        }
        Command::Extract { model, input, output, tau } => {
            let (_, out) = p.extract(model, &input, output.as_deref(), tau)?;
            println!("{}", out.display());
        }
        Command::Run { offline } => {
            for (kind, ev) in p.run_all(offline)? {
                println!("{kind:>8}  macro-F1 {:.4}  baseline {:.4}", ev.report.macro_f1(), ev.baseline.macro_f1());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
