//! gradcheck: finite-difference verification of the analytic gradients,
//! with a hidden corruption hook used by tests to prove the check can fail.

use crate::config::{model_config, Cfg};
use crate::error::CliError;
use hitmat_core::gradcheck::{run, GradCheckConfig};

use super::RunCtx;

pub const TOLERANCE: f64 = 1e-4;

pub fn cmd_gradcheck(cfg: &Cfg, ctx: &RunCtx, seed: u64, corrupt: bool) -> Result<(), CliError> {
    // Default to the small check model; an explicit [model] table overrides.
    let mut gc = GradCheckConfig { seed, ..Default::default() };
    if cfg.usize_opt("model.d_model")?.is_some() {
        gc.model = model_config(cfg)?;
    }
    let report = run(&gc, &ctx.threads, corrupt);

    let mut text = String::new();
    for v in &report.variants {
        text.push_str(&format!(
            "{}: max rel err {:.3e} over {} coordinates (worst: {}[{}], analytic {:.6e} vs fd {:.6e})\n",
            v.variant,
            v.max_rel_err,
            v.coords_checked,
            v.worst.0,
            v.worst.1,
            v.worst_values.0,
            v.worst_values.1
        ));
    }
    let pass = report.passes(TOLERANCE);
    text.push_str(&format!(
        "{}: max rel err {:.3e} vs tolerance {TOLERANCE:.0e}\n",
        if pass { "PASS" } else { "FAIL" },
        report.max_rel_err
    ));
    print!("{text}");

    let report_path = ctx.out("gradcheck.txt");
    crate::io::write_atomic(&report_path, text.as_bytes())?;
    let mut manifest = ctx.manifest("gradcheck", cfg);
    manifest.add_output(&report_path);
    manifest.finish(&ctx.out_dir)?;

    if pass {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max rel err {:.3e}",
            report.max_rel_err
        )))
    }
}
