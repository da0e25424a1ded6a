//! Command implementations. Each one reads everything through the resolved
//! config, writes its outputs under the run directory, and drops a manifest
//! next to them.

mod build_dataset;
mod evaluate;
mod finetune;
mod gradcheck;
mod pretrain;
mod search;
mod synth_gen;

pub use build_dataset::cmd_build_dataset;
pub use evaluate::{cmd_evaluate, ActivationSource};
pub use finetune::cmd_finetune;
pub use gradcheck::cmd_gradcheck;
pub use pretrain::cmd_pretrain;
pub use search::{cmd_search, SearchMode};
pub use synth_gen::cmd_synth_gen;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::config::Cfg;
use crate::error::CliError;
use crate::exec::Threads;
use crate::manifest::Manifest;
use hitmat_core::seq::Cdr3Seq;

/// Shared run context: output directory, runtime, and the global seed flag.
pub struct RunCtx {
    pub out_dir: PathBuf,
    pub threads: Threads,
    pub seed_override: Option<u64>,
}

impl RunCtx {
    pub fn new(out_dir: PathBuf, threads: Threads, seed_override: Option<u64>) -> RunCtx {
        RunCtx { out_dir, threads, seed_override }
    }

    pub fn manifest(&self, command: &str, cfg: &Cfg) -> Manifest {
        Manifest::start(command, cfg, self.seed_override, self.threads.count())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Parses `--context`: `@path` reads one sequence per line, otherwise the
/// value is a comma-separated list.
pub fn parse_context_arg(arg: &str) -> Result<Vec<Cdr3Seq>, CliError> {
    let items: Vec<String> = if let Some(path) = arg.strip_prefix('@') {
        std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read context file {path}: {e}")))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().to_string())
            .collect()
    } else {
        arg.split(',').map(|s| s.trim().to_string()).collect()
    };
    items
        .iter()
        .map(|s| {
            s.parse::<Cdr3Seq>()
                .map_err(|e| CliError::config(format!("bad context sequence {s:?}: {e}")))
        })
        .collect()
}

/// Reads an exclusion file: one sequence per line.
pub fn read_exclusions(path: Option<&Path>) -> Result<BTreeSet<Cdr3Seq>, CliError> {
    let Some(path) = path else {
        return Ok(BTreeSet::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read exclusion file {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim().parse::<Cdr3Seq>().map_err(|e| {
                CliError::io(format!("{}: bad sequence {l:?}: {e}", path.display()))
            })
        })
        .collect()
}
