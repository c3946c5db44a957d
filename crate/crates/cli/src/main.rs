use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use graphprompt_cli::config::{ExperimentKind, Settings};
use graphprompt_cli::error::{CliError, Result};
use graphprompt_cli::experiments;
use graphprompt_cli::report::Report;

#[derive(Parser)]
#[command(
    name = "graphprompt",
    version,
    about = "Pre-train, prompt, and meta-tune graph neural pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (section.key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports, checkpoints, and curves.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed-level parallelism (results merge in seed order).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pre-training of the backbone.
    Pretrain(RunArgs),
    /// Episodic meta-training of prompt and head over a frozen backbone.
    Metatune(RunArgs),
    /// Few-shot multi-task comparison of supervised / fine-tune / prompt.
    Fewshot(RunArgs),
    /// Transferability across task levels or domains.
    Transfer(RunArgs),
    /// Component ablations.
    Ablate(RunArgs),
    /// Error-bound study over graph manipulations.
    Errorbound(RunArgs),
    /// Link prediction with ranked negatives.
    Linkpred(RunArgs),
    /// Generate a synthetic dataset on disk.
    Synth(RunArgs),
    /// Tunable-parameter accounting.
    Params(RunArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Pretrain(_) => ExperimentKind::Pretrain,
            Command::Metatune(_) => ExperimentKind::Metatune,
            Command::Fewshot(_) => ExperimentKind::Fewshot,
            Command::Transfer(_) => ExperimentKind::Transfer,
            Command::Ablate(_) => ExperimentKind::Ablate,
            Command::Errorbound(_) => ExperimentKind::Errorbound,
            Command::Linkpred(_) => ExperimentKind::Linkpred,
            Command::Synth(_) => ExperimentKind::Synth,
            Command::Params(_) => ExperimentKind::Params,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Pretrain(a)
            | Command::Metatune(a)
            | Command::Fewshot(a)
            | Command::Transfer(a)
            | Command::Ablate(a)
            | Command::Errorbound(a)
            | Command::Linkpred(a)
            | Command::Synth(a)
            | Command::Params(a) => a,
        }
    }
}

fn load_settings(command: &Command) -> Result<Settings> {
    let args = command.args();
    let mut cfg = Settings::load(&args.config)?;
    cfg.kind = command.kind();
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be >= 1"));
        }
        cfg.jobs = jobs;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<()> {
    let cfg = load_settings(&command)?;
    let out_dir = cfg.out.clone();
    let started = Instant::now();
    let report: Report = match cfg.kind {
        ExperimentKind::Pretrain => experiments::run_pretrain(&cfg, &out_dir)?,
        ExperimentKind::Metatune => experiments::run_metatune(&cfg, &out_dir)?,
        ExperimentKind::Fewshot => experiments::run_fewshot(&cfg, &out_dir)?,
        ExperimentKind::Transfer => experiments::run_transfer(&cfg)?,
        ExperimentKind::Ablate => experiments::run_ablation(&cfg)?,
        ExperimentKind::Errorbound => experiments::run_error_bound(&cfg)?,
        ExperimentKind::Linkpred => experiments::run_linkpred(&cfg)?,
        ExperimentKind::Synth => experiments::run_synth(&cfg, &out_dir)?,
        ExperimentKind::Params => experiments::run_params(&cfg)?,
    };
    let report = report.with_runtime(started.elapsed().as_secs_f64());
    let path = out_dir.join(format!("{}_report.json", cfg.kind.as_str()));
    report.write(&path)?;
    println!("wrote {}", path.display());
    for (metric, agg) in &report.aggregate {
        println!("  {metric}: mean {:.4} (std {:.4})", agg.mean, agg.std);
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints usage; unknown subcommands and bad flags exit 2
            let _ = e.print();
            std::process::exit(2);
        }
    };
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
