//! pretrain: next-token training on the distinct CDR3s of a scores file.
//! `--checkpoint` warm-starts from an earlier run; its step count then
//! offsets the new log so step numbering continues.

use std::collections::BTreeSet;
use std::path::Path;

use crate::config::{model_config, train_config, Cfg};
use crate::error::CliError;
use crate::io::{checkpoint, reports, scores};
use hitmat_core::seq::Cdr3Seq;
use hitmat_core::train::pretrain_from;

use super::RunCtx;

pub fn cmd_pretrain(
    cfg: &Cfg,
    ctx: &RunCtx,
    data_path: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let mut mc = model_config(cfg)?;
    let tc = train_config(cfg)?;
    let cands = scores::read_scores_tsv(data_path)?;
    let corpus: Vec<Cdr3Seq> = cands
        .into_iter()
        .map(|c| c.cdr3)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let (init, step_offset) = match resume {
        Some(path) => {
            let prev = checkpoint::load_checkpoint(path)?;
            mc = prev.config;
            (Some(prev.params.clone()), prev.provenance.step)
        }
        None => (None, 0),
    };
    let (mut ckpt, mut log) =
        pretrain_from(&corpus, &mc, &tc, init.as_ref(), &ctx.threads)?;
    ckpt.provenance.step += step_offset;
    for r in &mut log.records {
        r.step += step_offset;
    }

    let ckpt_path = ctx.out("pretrained.ckpt");
    let log_path = ctx.out("pretrain_log.csv");
    checkpoint::save_checkpoint(&ckpt_path, &ckpt)?;
    reports::write_train_log_csv(&log_path, &log)?;

    let mut manifest = ctx.manifest("pretrain", cfg);
    manifest.add_input(data_path)?;
    if let Some(path) = resume {
        manifest.add_input(path)?;
    }
    manifest.add_output(&ckpt_path);
    manifest.add_output(&log_path);
    manifest.finish(&ctx.out_dir)?;

    println!(
        "pretrain: {} sequences, best val cross-entropy {:.4} at step {} -> {}",
        corpus.len(),
        ckpt.provenance.validation_loss,
        ckpt.provenance.step,
        ckpt_path.display()
    );
    Ok(())
}
