//! synth-gen: sample the synthetic candidate population and persist both the
//! scored TSV and the hidden per-target oracles.

use crate::config::{synth_params, Cfg};
use crate::error::CliError;
use crate::io::{reports, scores};

use super::RunCtx;

pub fn cmd_synth_gen(cfg: &Cfg, ctx: &RunCtx) -> Result<(), CliError> {
    let (params, n_per_target, n_targets) = synth_params(cfg)?;
    let out = hitmat_core::eval::generate_scored_candidates(&params, n_per_target, n_targets)?;

    let scores_path = ctx.out("scores.tsv");
    let oracle_path = ctx.out("oracle.json");
    scores::write_scores_tsv(&scores_path, &out.candidates)?;
    reports::write_oracle_json(&oracle_path, &out.targets)?;

    let mut manifest = ctx.manifest("synth-gen", cfg);
    manifest.add_output(&scores_path);
    manifest.add_output(&oracle_path);
    manifest.finish(&ctx.out_dir)?;

    println!(
        "synth-gen: {} candidates across {} targets -> {}",
        out.candidates.len(),
        n_targets,
        scores_path.display()
    );
    Ok(())
}
