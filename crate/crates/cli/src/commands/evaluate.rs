//! evaluate: join a search report with activations (a measured table or the
//! noiseless oracle) into the loss-vs-activation scatter report with its
//! correlation summary. Rows the search excluded stay excluded here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::Cfg;
use crate::error::CliError;
use crate::io::reports;
use hitmat_core::eval::{oracle_fitness, pearson_permutation, scatter_summary};
use hitmat_core::search::{MutantScore, SearchSource};
use hitmat_core::seq::{Cdr3Seq, Mutation};

use super::RunCtx;

pub enum ActivationSource {
    /// TSV of measured activations.
    Table(PathBuf),
    /// Noiseless oracle fitness for the named target.
    Oracle { path: PathBuf, target: String },
}

pub fn cmd_evaluate(
    cfg: &Cfg,
    ctx: &RunCtx,
    report_path: &Path,
    source: &ActivationSource,
    permutation_p: bool,
) -> Result<(), CliError> {
    let rows = reports::read_search_csv(report_path)?;
    let baseline_row = rows
        .iter()
        .find(|r| r.rank == 0)
        .ok_or_else(|| CliError::io(format!("{}: no baseline row", report_path.display())))?;
    let parent = baseline_row.parent.clone();
    let mutant_rows: Vec<&reports::SearchRow> = rows
        .iter()
        .filter(|r| r.rank > 0 && r.excluded_reason.is_empty())
        .collect();

    let lookup: Box<dyn Fn(&Cdr3Seq) -> Result<f64, CliError>> = match source {
        ActivationSource::Table(path) => {
            let table = reports::read_activations_tsv(path)?;
            Box::new(move |seq: &Cdr3Seq| {
                table.get(seq).copied().ok_or_else(|| {
                    CliError::config(format!("no activation recorded for {seq}"))
                })
            })
        }
        ActivationSource::Oracle { path, target } => {
            let oracles = reports::read_oracle_json(path)?;
            let oracle = oracles.get(target).cloned().ok_or_else(|| {
                CliError::config(format!("target {target:?} not present in {}", path.display()))
            })?;
            Box::new(move |seq: &Cdr3Seq| Ok(oracle_fitness(&oracle, seq, true)?))
        }
    };

    let baseline_activation = lookup(&parent)?;
    let mut activations: BTreeMap<Cdr3Seq, f64> = BTreeMap::new();
    let mut scores = Vec::with_capacity(mutant_rows.len());
    for row in &mutant_rows {
        activations.insert(row.sequence.clone(), lookup(&row.sequence)?);
        scores.push(MutantScore {
            mutations: Mutation::diff(&parent, &row.sequence).unwrap_or_default(),
            parent: parent.clone(),
            sequence: row.sequence.clone(),
            per_perm_losses: vec![row.avg_loss],
            avg_loss: row.avg_loss,
            source: SearchSource::Exhaustive,
        });
    }
    let report = scatter_summary(&scores, &activations, baseline_activation)?;

    let scatter_path = ctx.out("scatter_report.csv");
    reports::write_scatter_csv(&scatter_path, &report)?;

    let mut manifest = ctx.manifest("evaluate", cfg);
    manifest.add_input(report_path)?;
    match source {
        ActivationSource::Table(path) => manifest.add_input(path)?,
        ActivationSource::Oracle { path, .. } => manifest.add_input(path)?,
    }
    manifest.add_output(&scatter_path);
    manifest.finish(&ctx.out_dir)?;

    match (report.r, report.p) {
        (Some(r), Some(p)) => println!(
            "evaluate: n={} r={r:.4} p={p:.4} baseline={:.4} -> {}",
            report.rows.len(),
            report.baseline,
            scatter_path.display()
        ),
        _ => println!(
            "evaluate: n={} (too few points for a correlation) -> {}",
            report.rows.len(),
            scatter_path.display()
        ),
    }
    if permutation_p && report.rows.len() >= 3 {
        let losses: Vec<f64> = report.rows.iter().map(|r| r.avg_loss).collect();
        let acts: Vec<f64> = report.rows.iter().map(|r| r.activation).collect();
        let seed = ctx.seed_override.unwrap_or_else(|| cfg.u64_or("data.seed", 0).unwrap_or(0));
        let p_perm = pearson_permutation(&losses, &acts, 10_000, seed)?;
        println!("evaluate: permutation p={p_perm:.4} (10000 shuffles, seed {seed})");
    }
    Ok(())
}
