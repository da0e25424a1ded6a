use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hitmat::commands::{
    cmd_build_dataset, cmd_evaluate, cmd_finetune, cmd_gradcheck, cmd_pretrain, cmd_search,
    cmd_synth_gen, ActivationSource, RunCtx, SearchMode,
};
use hitmat::config::Cfg;
use hitmat::exec::Threads;
use hitmat::CliError;

/// Preference-tuned protein sequence models for CDR3 hit maturation:
/// build preference datasets from scored candidates, pretrain and fine-tune a
/// small autoregressive model, and search mutants of a parent by
/// permutation-averaged model loss.
#[derive(Parser)]
#[command(name = "hitmat", version, arg_required_else_help = true)]
struct Cli {
    /// TOML config file; one source of truth per run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set loss.beta=0.2 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads (default: available cores). Output never depends on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override every *.seed config key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for outputs and manifests.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Greedy,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scored candidate population and its oracle.
    SynthGen,
    /// Build train/val preference pairs from a scores TSV.
    BuildDataset {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Pretrain the autoregressive model on the CDR3s of a scores TSV.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Warm-start from an earlier checkpoint (continues step numbering).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Preference fine-tuning against a frozen copy of the checkpoint.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
    },
    /// Rank mutants of a parent by permutation-averaged model loss.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        parent: String,
        /// Comma-separated sequences, or @FILE with one per line.
        #[arg(long)]
        context: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Exhaustive)]
        mode: ModeArg,
        #[arg(long, default_value_t = 2)]
        max_subs: usize,
        #[arg(long, default_value_t = 45)]
        top_m: usize,
        /// Sequences to drop from the ranking (e.g. training-set CDR3s).
        #[arg(long)]
        exclude_file: Option<PathBuf>,
        /// Greedy mode: substitutions proposed per position.
        #[arg(long, default_value_t = 3)]
        topk: usize,
    },
    /// Join a search report with activations into a scatter report.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        /// Measured activations TSV (sequence \t activation).
        #[arg(long, conflicts_with = "oracle")]
        activations: Option<PathBuf>,
        /// Oracle JSON from synth-gen; requires --target.
        #[arg(long, requires = "target")]
        oracle: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Also report a seeded 10k-shuffle permutation p-value.
        #[arg(long, default_value_t = false)]
        permutation_p: bool,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: corrupt one gradient entry; the check must then fail.
        #[arg(long, hide = true, default_value_t = false)]
        corrupt: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Cfg::load(path, &cli.set)?,
        None => {
            let mut cfg = Cfg::default();
            cfg.apply_overrides(&cli.set)?;
            cfg
        }
    };
    if let Some(seed) = cli.seed {
        cfg.override_all_seeds(seed)?;
    }
    let threads = cli.threads.map(Threads::new).unwrap_or_else(Threads::auto);
    std::fs::create_dir_all(&cli.out)?;
    let ctx = RunCtx::new(cli.out.clone(), threads, cli.seed);

    match &cli.cmd {
        Cmd::SynthGen => cmd_synth_gen(&cfg, &ctx),
        Cmd::BuildDataset { scores } => cmd_build_dataset(&cfg, &ctx, scores),
        Cmd::Pretrain { data, checkpoint } => {
            cmd_pretrain(&cfg, &ctx, data, checkpoint.as_deref())
        }
        Cmd::Finetune { checkpoint, train, val } => {
            cmd_finetune(&cfg, &ctx, checkpoint, train, val)
        }
        Cmd::Search {
            checkpoint,
            parent,
            context,
            mode,
            max_subs,
            top_m,
            exclude_file,
            topk,
        } => cmd_search(
            &cfg,
            &ctx,
            checkpoint,
            parent,
            context,
            match mode {
                ModeArg::Exhaustive => SearchMode::Exhaustive,
                ModeArg::Greedy => SearchMode::Greedy,
            },
            *max_subs,
            *top_m,
            exclude_file.as_deref(),
            *topk,
        ),
        Cmd::Evaluate { report, activations, oracle, target, permutation_p } => {
            let source = match (activations, oracle) {
                (Some(path), None) => ActivationSource::Table(path.clone()),
                (None, Some(path)) => ActivationSource::Oracle {
                    path: path.clone(),
                    target: target.clone().expect("clap enforces --target"),
                },
                _ => {
                    return Err(CliError::config(
                        "evaluate needs exactly one of --activations or --oracle",
                    ))
                }
            };
            cmd_evaluate(&cfg, &ctx, report, &source, *permutation_p)
        }
        Cmd::Gradcheck { seed, corrupt } => cmd_gradcheck(&cfg, &ctx, *seed, *corrupt),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
