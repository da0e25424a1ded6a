//! Finite-difference verification of the analytic gradients.
//!
//! For each preference loss variant, a random tiny model and a random batch
//! of preference pairs define a scalar objective of the policy parameters
//! (the reference model and, for KTO, the KL estimate are held fixed, which
//! matches the detached-KL training semantics). The analytic gradient is
//! compared against central finite differences over a stratified sample of
//! coordinates covering every parameter tensor.
//!
//! Hinge draws whose scaled margin lands within a small window of the kink
//! are redrawn: finite differences straddling the kink measure neither
//! one-sided derivative, while the implementation deliberately uses the
//! inactive-branch subgradient there.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::loss::{pair_loss_and_grad, LossConfig, LossVariant, PairLogps};
use crate::model::{
    completion_logprob, completion_logprob_with_grad, layout, ModelConfig, Parameters,
};
use crate::rng::Rng;
use crate::runtime::Runtime;
use crate::seq::{encode_pair, Cdr3Seq, PromptEncoding, Residue};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Independent (params, batch) draws per variant.
    pub n_draws: usize,
    /// Finite-difference coordinates sampled per draw (plus two per tensor).
    pub coords_per_draw: usize,
    /// Central-difference step.
    pub step: f64,
    pub beta: f64,
    /// Pairs per batch.
    pub batch: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: ModelConfig {
                d_model: 16,
                n_heads: 4,
                d_ff: 64,
                max_len: 48,
                n_layers: 2,
                ..Default::default()
            },
            seed: 0,
            n_draws: 10,
            coords_per_draw: 400,
            step: 1e-4,
            beta: 0.1,
            batch: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantReport {
    pub variant: LossVariant,
    pub max_rel_err: f64,
    /// Tensor name and in-tensor index of the worst coordinate.
    pub worst: (String, usize),
    /// Analytic and finite-difference values at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub variants: Vec<VariantReport>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

fn random_seq(rng: &mut Rng, len: usize) -> Cdr3Seq {
    Cdr3Seq::new(
        (0..len)
            .map(|_| Residue::from_index(rng.below(Residue::COUNT)).unwrap())
            .collect(),
    )
    .unwrap()
}

struct DrawBatch {
    encs: Vec<(PromptEncoding, PromptEncoding)>,
    ref_logps: Vec<(f64, f64)>,
    kl: f64,
}

fn draw_batch(
    cfg: &GradCheckConfig,
    reference: &Parameters,
    policy: &Parameters,
    rng: &mut Rng,
    variant: LossVariant,
) -> DrawBatch {
    let max_len = cfg.model.max_len;
    loop {
        let encs: Vec<(PromptEncoding, PromptEncoding)> = (0..cfg.batch)
            .map(|_| {
                let mut rnd_seq = |spread: usize| {
                    let len = 4 + rng.below(spread);
                    random_seq(rng, len)
                };
                let ctx = alloc::vec![rnd_seq(3), rnd_seq(3)];
                let chosen = rnd_seq(4);
                let rejected = rnd_seq(4);
                (
                    encode_pair(&ctx, &chosen, max_len).unwrap(),
                    encode_pair(&ctx, &rejected, max_len).unwrap(),
                )
            })
            .collect();
        let ref_logps: Vec<(f64, f64)> = encs
            .iter()
            .map(|(ec, er)| {
                (
                    completion_logprob(reference, ec).unwrap(),
                    completion_logprob(reference, er).unwrap(),
                )
            })
            .collect();
        // A fixed KL reference point for KTO, estimated once at the base
        // policy and then frozen (detached semantics).
        let kl = if variant == LossVariant::Kto {
            let ratios: Vec<f64> = encs
                .iter()
                .zip(&ref_logps)
                .map(|((ec, _), &(rc, _))| completion_logprob(policy, ec).unwrap() - rc)
                .collect();
            crate::loss::kl_estimate(&ratios).unwrap()
        } else {
            0.0
        };
        if variant == LossVariant::Hinge {
            // Kink guard: redraw if any pair's scaled margin is near 1.
            let near_kink = encs.iter().zip(&ref_logps).any(|((ec, er), &(rc, rr))| {
                let pl = PairLogps {
                    policy_chosen: completion_logprob(policy, ec).unwrap(),
                    policy_rejected: completion_logprob(policy, er).unwrap(),
                    ref_chosen: rc,
                    ref_rejected: rr,
                };
                let z = cfg.beta * (pl.delta_chosen() - pl.delta_rejected());
                (1.0 - z).abs() < 5e-2
            });
            if near_kink {
                continue;
            }
        }
        return DrawBatch { encs, ref_logps, kl };
    }
}

fn batch_objective(
    policy: &Parameters,
    batch: &DrawBatch,
    loss_cfg: &LossConfig,
) -> f64 {
    let mut total = 0.0;
    for ((ec, er), &(rc, rr)) in batch.encs.iter().zip(&batch.ref_logps) {
        let pl = PairLogps {
            policy_chosen: completion_logprob(policy, ec).unwrap(),
            policy_rejected: completion_logprob(policy, er).unwrap(),
            ref_chosen: rc,
            ref_rejected: rr,
        };
        total += pair_loss_and_grad(loss_cfg, &pl, batch.kl).0;
    }
    total / batch.encs.len() as f64
}

fn batch_gradient(policy: &Parameters, batch: &DrawBatch, loss_cfg: &LossConfig) -> Vec<f64> {
    let mut grad = alloc::vec![0.0; policy.n_params()];
    let inv_b = 1.0 / batch.encs.len() as f64;
    for ((ec, er), &(rc, rr)) in batch.encs.iter().zip(&batch.ref_logps) {
        let pl = PairLogps {
            policy_chosen: completion_logprob(policy, ec).unwrap(),
            policy_rejected: completion_logprob(policy, er).unwrap(),
            ref_chosen: rc,
            ref_rejected: rr,
        };
        let (_, g) = pair_loss_and_grad(loss_cfg, &pl, batch.kl);
        completion_logprob_with_grad(policy, ec, g.d_chosen * inv_b, &mut grad).unwrap();
        completion_logprob_with_grad(policy, er, g.d_rejected * inv_b, &mut grad).unwrap();
    }
    grad
}

/// Stratified coordinate sample: two per tensor plus uniform extras.
fn sample_coords(model: &ModelConfig, rng: &mut Rng, extra: usize, total: usize) -> Vec<usize> {
    let mut coords = Vec::new();
    for spec in layout(model) {
        coords.push(spec.offset + rng.below(spec.len()));
        coords.push(spec.offset + rng.below(spec.len()));
    }
    for _ in 0..extra {
        coords.push(rng.below(total));
    }
    coords.sort_unstable();
    coords.dedup();
    coords
}

fn tensor_of(model: &ModelConfig, coord: usize) -> (String, usize) {
    for spec in layout(model) {
        if coord >= spec.offset && coord < spec.offset + spec.len() {
            return (spec.name, coord - spec.offset);
        }
    }
    (format!("coord{coord}"), coord)
}

/// Guarded relative error: |a - n| / max(|a|, |n|, 1e-3). A central
/// difference at step 1e-4 carries ~1e-8 of truncation noise in absolute
/// terms, so coordinates with tiny gradients cannot be compared relatively;
/// the floor pins them to an absolute scale instead. Every coordinate with a
/// gradient large enough to matter (>= 1e-3) gets a true relative check.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-3);
    (a - n).abs() / denom
}

/// Runs the full check. `corrupt` deliberately perturbs one analytic
/// gradient entry per draw (a test hook: the report must then fail).
pub fn run(cfg: &GradCheckConfig, rt: &impl Runtime, corrupt: bool) -> GradCheckReport {
    let mut variants = Vec::new();
    let mut overall: f64 = 0.0;
    for variant in [LossVariant::Sigmoid, LossVariant::Hinge, LossVariant::Kto] {
        let loss_cfg = LossConfig::new(variant, cfg.beta);
        let per_draw = rt.par_map(cfg.n_draws, &|draw| {
            let mut rng = Rng::derive(cfg.seed, 0x6763 ^ ((variant as u64) << 32) ^ draw as u64);
            let policy = Parameters::init(&ModelConfig {
                seed: rng.next_u64(),
                ..cfg.model
            })
            .unwrap();
            let reference = Parameters::init(&ModelConfig {
                seed: rng.next_u64(),
                ..cfg.model
            })
            .unwrap();
            let batch = draw_batch(cfg, &reference, &policy, &mut rng, variant);
            let mut analytic = batch_gradient(&policy, &batch, &loss_cfg);
            let coords = sample_coords(&cfg.model, &mut rng, cfg.coords_per_draw, policy.n_params());
            if corrupt {
                let at = coords[rng.below(coords.len())];
                analytic[at] += 0.5 + analytic[at].abs();
            }
            let mut worst = (0.0f64, 0usize, 0.0f64, 0.0f64);
            let mut probe = policy.clone();
            for &c in &coords {
                let orig = probe.data()[c];
                probe.data_mut()[c] = orig + cfg.step;
                let up = batch_objective(&probe, &batch, &loss_cfg);
                probe.data_mut()[c] = orig - cfg.step;
                let down = batch_objective(&probe, &batch, &loss_cfg);
                probe.data_mut()[c] = orig;
                let fd = (up - down) / (2.0 * cfg.step);
                let e = rel_err(analytic[c], fd);
                if e > worst.0 {
                    worst = (e, c, analytic[c], fd);
                }
            }
            (worst, coords.len())
        });
        let mut max_rel_err = 0.0f64;
        let mut worst_coord = 0usize;
        let mut worst_values = (0.0, 0.0);
        let mut checked = 0usize;
        for ((e, c, a, n), count) in per_draw {
            if e > max_rel_err {
                max_rel_err = e;
                worst_coord = c;
                worst_values = (a, n);
            }
            checked += count;
        }
        overall = overall.max(max_rel_err);
        variants.push(VariantReport {
            variant,
            max_rel_err,
            worst: tensor_of(&cfg.model, worst_coord),
            worst_values,
            coords_checked: checked,
        });
    }
    GradCheckReport { variants, max_rel_err: overall }
}
