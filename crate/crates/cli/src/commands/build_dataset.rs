//! build-dataset: scored candidates -> disjoint train/val preference pairs
//! plus a stats report (pair counts, straddler count, score-gap histogram).

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{dataset_config, Cfg};
use crate::error::CliError;
use crate::io::reports::{DatasetStats, Histogram, SkippedEntry};
use crate::io::{pairs, reports, scores};
use hitmat_core::dataset::{build_dataset, group_by_cdr3};

use super::RunCtx;

pub fn cmd_build_dataset(cfg: &Cfg, ctx: &RunCtx, scores_path: &Path) -> Result<(), CliError> {
    let dc = dataset_config(cfg)?;
    let cands = scores::read_scores_tsv(scores_path)?;
    let grouped = group_by_cdr3(&cands);
    let (outcome, report) = build_dataset(&grouped, &dc)?;

    let train_path = ctx.out("pairs.train.jsonl");
    let val_path = ctx.out("pairs.val.jsonl");
    pairs::write_pairs_jsonl(&train_path, &outcome.train)?;
    pairs::write_pairs_jsonl(&val_path, &outcome.val)?;

    let mut pairs_per_target: BTreeMap<String, usize> = BTreeMap::new();
    let mut gaps = Vec::new();
    for p in outcome.train.iter().chain(&outcome.val) {
        *pairs_per_target.entry(p.target_id.clone()).or_default() += 1;
        let per_target = &grouped[&p.target_id];
        gaps.push(per_target[&p.chosen] - per_target[&p.rejected]);
    }
    let mut skipped = Vec::new();
    for (side, list) in [("train", &report.skipped_train), ("val", &report.skipped_val)] {
        for (target, reason) in list {
            skipped.push(SkippedEntry {
                target: target.clone(),
                side: side.to_string(),
                reason: reason.to_string(),
            });
        }
    }
    for s in &skipped {
        eprintln!(
            "warning: target {} contributed no {} pairs: {}",
            s.target, s.side, s.reason
        );
    }
    let stats = DatasetStats {
        n_train: outcome.train.len(),
        n_val: outcome.val.len(),
        discarded_straddlers: outcome.discarded,
        pairs_per_target,
        skipped,
        score_gap_histogram: Histogram::build(&gaps, 10),
    };
    let stats_path = ctx.out("dataset_stats.json");
    reports::write_stats_json(&stats_path, &stats)?;

    let mut manifest = ctx.manifest("build-dataset", cfg);
    manifest.add_input(scores_path)?;
    manifest.add_output(&train_path);
    manifest.add_output(&val_path);
    manifest.add_output(&stats_path);
    manifest.finish(&ctx.out_dir)?;

    println!(
        "build-dataset: {} train pairs, {} val pairs ({} straddlers discarded) -> {}",
        stats.n_train,
        stats.n_val,
        stats.discarded_straddlers,
        train_path.display()
    );
    Ok(())
}
