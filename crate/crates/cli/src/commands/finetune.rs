//! finetune: preference fine-tuning of a pretrained checkpoint. When the
//! input checkpoint is itself fine-tuned the new log continues its step
//! numbering (the optimizer state, which the checkpoint format does not
//! carry, starts fresh).

use std::path::Path;

use crate::config::{train_config, Cfg};
use crate::error::CliError;
use crate::io::{checkpoint, pairs, reports};
use hitmat_core::model::Phase;
use hitmat_core::train::finetune;

use super::RunCtx;

pub fn cmd_finetune(
    cfg: &Cfg,
    ctx: &RunCtx,
    checkpoint_path: &Path,
    train_path: &Path,
    val_path: &Path,
) -> Result<(), CliError> {
    let tc = train_config(cfg)?;
    let pre = checkpoint::load_checkpoint(checkpoint_path)?;
    let train_pairs = pairs::read_pairs_jsonl(train_path)?;
    let val_pairs = pairs::read_pairs_jsonl(val_path)?;

    let step_offset =
        if pre.provenance.phase == Phase::FineTuned { pre.provenance.step } else { 0 };
    let (mut ckpt, mut log) = finetune(&pre, &train_pairs, &val_pairs, &tc, &ctx.threads)?;
    ckpt.provenance.step += step_offset;
    for r in &mut log.records {
        r.step += step_offset;
    }

    let ckpt_path = ctx.out("finetuned.ckpt");
    let log_path = ctx.out("finetune_log.csv");
    checkpoint::save_checkpoint(&ckpt_path, &ckpt)?;
    reports::write_train_log_csv(&log_path, &log)?;

    let mut manifest = ctx.manifest("finetune", cfg);
    manifest.add_input(checkpoint_path)?;
    manifest.add_input(train_path)?;
    manifest.add_input(val_path)?;
    manifest.add_output(&ckpt_path);
    manifest.add_output(&log_path);
    manifest.finish(&ctx.out_dir)?;

    let last = log.records.last().expect("log has records");
    let acc = last.diagnostics.map(|d| d.preference_accuracy).unwrap_or(f64::NAN);
    println!(
        "finetune[{}]: {} train pairs, best val loss {:.6} at step {}, final val accuracy {:.3} -> {}",
        tc.loss.variant,
        train_pairs.len(),
        ckpt.provenance.validation_loss,
        ckpt.provenance.step,
        acc,
        ckpt_path.display()
    );
    Ok(())
}
