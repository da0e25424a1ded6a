//! Training loops: next-token pretraining on a sequence corpus and
//! preference fine-tuning against a frozen reference model.
//!
//! Both phases share the same machinery: seeded per-epoch shuffling, micro
//! batches with gradient accumulation (the accumulated gradient is the exact
//! mean over every example touched since the last step, so `g` accumulated
//! micro-batches equal one step on the concatenated batch), Adam with linear
//! learning-rate decay to zero, periodic validation, and retention of the
//! checkpoint with the lowest validation loss.
//!
//! The reference model is a frozen copy of the pretrained checkpoint; its
//! log-probabilities for the fixed pair sets are computed once up front.
//! KTO's KL reference point is re-estimated per micro-batch from mismatched
//! (context, completion) pairings by index shift, so it depends only on the
//! (seeded) batch order.

use alloc::vec::Vec;

use crate::loss::{
    diagnostics, kl_estimate, pair_loss_and_grad, BatchDiagnostics, LossConfig, LossError,
    LossVariant, PairLogps,
};
use crate::model::{
    backward_completion, forward_seq, masked_logprob_terms, ModelCheckpoint, ModelConfig,
    ModelError, Parameters, Phase, Provenance,
};
use crate::dataset::PreferencePair;
use crate::rng::Rng;
use crate::runtime::Runtime;
use crate::seq::{encode_pair, encode_sequence, Cdr3Seq, EncodeError, PromptEncoding};

const SHUFFLE_SALT: u64 = 0x7368_7566;
const SPLIT_SALT: u64 = 0x7663_6f72;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Initial learning rate; decays linearly to zero over the run.
    /// Zero is allowed and makes every step a no-op.
    pub lr: f64,
    pub epochs: usize,
    /// Examples (sequences or pairs) per micro-batch.
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    /// Optimizer steps between validations.
    pub eval_every: usize,
    pub seed: u64,
    /// Corpus fraction held out during pretraining (ignored by fine-tuning).
    pub val_fraction: f64,
    /// Preference loss (fine-tuning only).
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 10,
            batch_size: 16,
            grad_accum: 1,
            eval_every: 50,
            seed: 0,
            val_fraction: 0.1,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config("lr must be finite and >= 0"));
        }
        for (v, name) in [
            (self.epochs, "epochs"),
            (self.batch_size, "batch_size"),
            (self.grad_accum, "grad_accum"),
            (self.eval_every, "eval_every"),
        ] {
            if v == 0 {
                return Err(TrainError::Config(name));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::Config("val_fraction"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    NonFinite { step: usize },
    EmptyBatch,
    EmptyCorpus,
    Config(&'static str),
    Model(ModelError),
    Encode(EncodeError),
    Loss(LossError),
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::NonFinite { step } => {
                write!(f, "non-finite loss at optimizer step {step} (diverged)")
            }
            TrainError::EmptyBatch => write!(f, "empty pair set"),
            TrainError::EmptyCorpus => write!(f, "empty corpus"),
            TrainError::Config(name) => write!(f, "invalid train config field {name}"),
            TrainError::Model(e) => write!(f, "model error: {e}"),
            TrainError::Encode(e) => write!(f, "encoding error: {e}"),
            TrainError::Loss(e) => write!(f, "loss error: {e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<EncodeError> for TrainError {
    fn from(e: EncodeError) -> Self {
        TrainError::Encode(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

/// Learning rate at optimizer step `step` (0-based) of `total`:
/// `lr0 * (1 - step/total)`, reaching exactly 0 at step `total`.
pub fn lr_at(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total as f64)
}

/// Adam with decoupled weight decay fixed at 0 (beta1 0.9, beta2 0.999,
/// eps 1e-8), bias-corrected.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: alloc::vec![0.0; n], v: alloc::vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let bc2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (libm::sqrt(vhat) + Self::EPS);
        }
    }
}

/// One validation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// Optimizer steps completed when this record was taken.
    pub step: usize,
    /// Learning rate that the next step will use.
    pub lr: f64,
    /// Mean train loss since the previous record; absent at step 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    /// Pairwise diagnostics on the validation set (fine-tuning only).
    pub diagnostics: Option<BatchDiagnostics>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
}

impl TrainLog {
    /// Record with the minimal validation loss (first on ties).
    pub fn best(&self) -> Option<&EvalRecord> {
        self.records.iter().fold(None, |best: Option<&EvalRecord>, r| match best {
            Some(b) if b.val_loss <= r.val_loss => Some(b),
            _ => Some(r),
        })
    }
}

fn ordered_add(acc: &mut [f64], grads: &[Vec<f64>]) {
    for g in grads {
        for (a, &v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
}

/// Mean per-token cross-entropy of a set of encodings under `params`.
fn corpus_cross_entropy(
    params: &Parameters,
    encs: &[PromptEncoding],
    rt: &impl Runtime,
) -> Result<f64, TrainError> {
    let sums = rt.par_map(encs.len(), &|i| {
        forward_seq(params, encs[i].token_ids(), false)
            .map(|(logits, _)| masked_logprob_terms(&logits, &encs[i]).iter().sum::<f64>())
    });
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (lp, enc) in sums.into_iter().zip(encs) {
        nll -= lp?;
        tokens += enc.mask_count();
    }
    Ok(nll / tokens as f64)
}

/// Pretrains by next-token cross-entropy on `BOS seq EOS` encodings and
/// returns the lowest-validation-loss checkpoint plus the training log.
pub fn pretrain(
    corpus: &[Cdr3Seq],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    rt: &impl Runtime,
) -> Result<(ModelCheckpoint, TrainLog), TrainError> {
    pretrain_from(corpus, model_cfg, cfg, None, rt)
}

/// [`pretrain`] with an optional warm start: when `init` is given, training
/// resumes from those parameters instead of a fresh initialization (the
/// optimizer state starts empty either way).
pub fn pretrain_from(
    corpus: &[Cdr3Seq],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<&Parameters>,
    rt: &impl Runtime,
) -> Result<(ModelCheckpoint, TrainLog), TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let encs: Vec<PromptEncoding> = corpus
        .iter()
        .map(|s| encode_sequence(s, model_cfg.max_len))
        .collect::<Result<_, _>>()?;

    // Seeded holdout; a single-sequence corpus validates on itself.
    let (train_idx, val_idx) = if encs.len() == 1 {
        (alloc::vec![0usize], alloc::vec![0usize])
    } else {
        let mut idx: Vec<usize> = (0..encs.len()).collect();
        Rng::derive(cfg.seed, SPLIT_SALT).shuffle(&mut idx);
        let n_val = ((encs.len() as f64 * cfg.val_fraction) as usize).clamp(1, encs.len() - 1);
        let val = idx.split_off(encs.len() - n_val);
        (idx, val)
    };
    let val_encs: Vec<PromptEncoding> = val_idx.iter().map(|&i| encs[i].clone()).collect();

    let mut params = match init {
        Some(p) => p.clone(),
        None => Parameters::init(model_cfg).map_err(|_| TrainError::Config("model config"))?,
    };
    let mut adam = Adam::new(params.n_params());
    let micro_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(cfg.grad_accum);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Parameters)> = None;
    let record = |step: usize,
                      window: Option<f64>,
                      params: &Parameters,
                      log: &mut TrainLog,
                      best: &mut Option<(f64, usize, Parameters)>|
     -> Result<(), TrainError> {
        let val_loss = corpus_cross_entropy(params, &val_encs, rt)?;
        log.records.push(EvalRecord {
            step,
            lr: lr_at(cfg.lr, step, total_steps),
            train_loss: window,
            val_loss,
            diagnostics: None,
            wall_ms: rt.now_millis(),
        });
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            *best = Some((val_loss, step, params.clone()));
        }
        Ok(())
    };
    record(0, None, &params, &mut log, &mut best)?;

    let mut grad = alloc::vec![0.0; params.n_params()];
    let mut acc_tokens = 0usize;
    let mut acc_micro = 0usize;
    let mut step = 0usize;
    let mut window_nll = 0.0;
    let mut window_tokens = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        Rng::derive(cfg.seed, SHUFFLE_SALT ^ (epoch as u64 + 1)).shuffle(&mut order);
        let n_micro = order.chunks(cfg.batch_size).count();
        for (mi, micro) in order.chunks(cfg.batch_size).enumerate() {
            let results = rt.par_map(micro.len(), &|i| {
                let enc = &encs[micro[i]];
                let mut g = alloc::vec![0.0; grad.len()];
                crate::model::completion_logprob_with_grad(&params, enc, -1.0, &mut g)
                    .map(|lp| (lp, g, enc.mask_count()))
            });
            for r in results {
                let (lp, g, tokens) = r?;
                if !lp.is_finite() {
                    return Err(TrainError::NonFinite { step });
                }
                ordered_add(&mut grad, core::slice::from_ref(&g));
                acc_tokens += tokens;
                window_nll -= lp;
                window_tokens += tokens;
            }
            acc_micro += 1;
            if acc_micro == cfg.grad_accum || mi + 1 == n_micro {
                for g in grad.iter_mut() {
                    *g /= acc_tokens as f64;
                }
                let lr = lr_at(cfg.lr, step, total_steps);
                adam.step(params.data_mut(), &grad, lr);
                grad.fill(0.0);
                acc_tokens = 0;
                acc_micro = 0;
                step += 1;
                if step % cfg.eval_every == 0 || step == total_steps {
                    let window = (window_tokens > 0).then(|| window_nll / window_tokens as f64);
                    record(step, window, &params, &mut log, &mut best)?;
                    window_nll = 0.0;
                    window_tokens = 0;
                }
            }
        }
    }
    if log.records.last().map(|r| r.step) != Some(step) {
        let window = (window_tokens > 0).then(|| window_nll / window_tokens as f64);
        record(step, window, &params, &mut log, &mut best)?;
    }

    let (val_loss, best_step, best_params) = best.expect("at least the step-0 record exists");
    Ok((
        ModelCheckpoint {
            config: *model_cfg,
            params: best_params,
            provenance: Provenance {
                phase: Phase::Pretrained,
                loss_variant: None,
                beta: None,
                lr0: cfg.lr,
                total_steps,
                epochs: cfg.epochs,
                step: best_step,
                validation_loss: val_loss,
            },
        },
        log,
    ))
}

/// Chosen/rejected encodings for a set of pairs.
fn encode_pairs(
    pairs: &[PreferencePair],
    max_len: usize,
) -> Result<Vec<(PromptEncoding, PromptEncoding)>, TrainError> {
    pairs
        .iter()
        .map(|p| {
            Ok((
                encode_pair(&p.context, &p.chosen, max_len)?,
                encode_pair(&p.context, &p.rejected, max_len)?,
            ))
        })
        .collect()
}

fn pair_logps(
    params: &Parameters,
    encs: &[(PromptEncoding, PromptEncoding)],
    rt: &impl Runtime,
) -> Result<Vec<(f64, f64)>, TrainError> {
    let out = rt.par_map(encs.len(), &|i| {
        let c = crate::model::completion_logprob(params, &encs[i].0)?;
        let r = crate::model::completion_logprob(params, &encs[i].1)?;
        Ok::<_, ModelError>((c, r))
    });
    out.into_iter().map(|r| r.map_err(TrainError::from)).collect()
}

/// Mismatched (context, completion) encodings for KTO's KL estimate: the
/// context of pair `i` with the chosen completion of pair `i+1` (wrapping).
fn mismatched_encodings(
    pairs: &[&PreferencePair],
    max_len: usize,
) -> Result<Vec<PromptEncoding>, TrainError> {
    let n = pairs.len();
    (0..n)
        .map(|i| {
            let donor = pairs[(i + 1) % n];
            encode_pair(&pairs[i].context, &donor.chosen, max_len).map_err(TrainError::from)
        })
        .collect()
}

fn batch_kl(
    policy: &Parameters,
    reference: &Parameters,
    mm_encs: &[PromptEncoding],
    rt: &impl Runtime,
) -> Result<f64, TrainError> {
    let ratios = rt.par_map(mm_encs.len(), &|i| {
        let p = crate::model::completion_logprob(policy, &mm_encs[i])?;
        let r = crate::model::completion_logprob(reference, &mm_encs[i])?;
        Ok::<_, ModelError>(p - r)
    });
    let ratios: Vec<f64> = ratios.into_iter().collect::<Result<_, _>>()?;
    Ok(kl_estimate(&ratios)?)
}

/// Validation loss and diagnostics of `policy` against `reference` on a pair
/// set. For KTO the KL estimate comes from mismatched pairings over the given
/// pair order. Pure: no parameters are mutated.
pub fn evaluate(
    policy: &Parameters,
    reference: &Parameters,
    pairs: &[PreferencePair],
    loss_cfg: &LossConfig,
    rt: &impl Runtime,
) -> Result<(f64, BatchDiagnostics), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    loss_cfg.validate()?;
    let max_len = policy.config().max_len;
    let encs = encode_pairs(pairs, max_len)?;
    let pol = pair_logps(policy, &encs, rt)?;
    let refl = pair_logps(reference, &encs, rt)?;
    let batch: Vec<PairLogps> = pol
        .iter()
        .zip(&refl)
        .map(|(&(pc, pr), &(rc, rr))| PairLogps {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: rc,
            ref_rejected: rr,
        })
        .collect();
    let kl = if loss_cfg.variant == LossVariant::Kto {
        let refs: Vec<&PreferencePair> = pairs.iter().collect();
        let mm = mismatched_encodings(&refs, max_len)?;
        batch_kl(policy, reference, &mm, rt)?
    } else {
        0.0
    };
    let loss = batch
        .iter()
        .map(|p| pair_loss_and_grad(loss_cfg, p, kl).0)
        .sum::<f64>()
        / batch.len() as f64;
    let diag = diagnostics(&batch, loss_cfg.beta)?;
    Ok((loss, diag))
}

/// Fine-tunes `pretrained` on preference pairs. The reference model is a
/// frozen copy of the input checkpoint; the policy starts from it. Returns
/// the lowest-validation-loss checkpoint and the full log.
pub fn finetune(
    pretrained: &ModelCheckpoint,
    train_pairs: &[PreferencePair],
    val_pairs: &[PreferencePair],
    cfg: &TrainConfig,
    rt: &impl Runtime,
) -> Result<(ModelCheckpoint, TrainLog), TrainError> {
    cfg.validate()?;
    cfg.loss.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let model_cfg = pretrained.config;
    let max_len = model_cfg.max_len;
    let reference = &pretrained.params;
    let mut policy = pretrained.params.clone();

    let train_encs = encode_pairs(train_pairs, max_len)?;
    // Reference log-probabilities are fixed for the whole run.
    let ref_train = pair_logps(reference, &train_encs, rt)?;

    let mut adam = Adam::new(policy.n_params());
    let micro_per_epoch = train_pairs.len().div_ceil(cfg.batch_size);
    let steps_per_epoch = micro_per_epoch.div_ceil(cfg.grad_accum);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Parameters)> = None;
    let record = |step: usize,
                      window: Option<f64>,
                      policy: &Parameters,
                      log: &mut TrainLog,
                      best: &mut Option<(f64, usize, Parameters)>|
     -> Result<(), TrainError> {
        let (val_loss, diag) = evaluate(policy, reference, val_pairs, &cfg.loss, rt)?;
        log.records.push(EvalRecord {
            step,
            lr: lr_at(cfg.lr, step, total_steps),
            train_loss: window,
            val_loss,
            diagnostics: Some(diag),
            wall_ms: rt.now_millis(),
        });
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            *best = Some((val_loss, step, policy.clone()));
        }
        Ok(())
    };
    record(0, None, &policy, &mut log, &mut best)?;

    let mut grad = alloc::vec![0.0; policy.n_params()];
    let mut acc_pairs = 0usize;
    let mut acc_micro = 0usize;
    let mut step = 0usize;
    let mut window_loss = 0.0;
    let mut window_pairs = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        Rng::derive(cfg.seed, SHUFFLE_SALT ^ (epoch as u64 + 1)).shuffle(&mut order);
        let n_micro = order.chunks(cfg.batch_size).count();
        for (mi, micro) in order.chunks(cfg.batch_size).enumerate() {
            // KTO's KL reference point for this micro-batch.
            let kl = if cfg.loss.variant == LossVariant::Kto {
                let batch_pairs: Vec<&PreferencePair> =
                    micro.iter().map(|&i| &train_pairs[i]).collect();
                let mm = mismatched_encodings(&batch_pairs, max_len)?;
                batch_kl(&policy, reference, &mm, rt)?
            } else {
                0.0
            };

            // Phase A: cached forwards for both completions of every pair.
            let fwds = rt.par_map(micro.len(), &|i| {
                let (ec, er) = &train_encs[micro[i]];
                let (lc, cc) = forward_seq(&policy, ec.token_ids(), true)?;
                let (lr_, cr) = forward_seq(&policy, er.token_ids(), true)?;
                let lp_c: f64 = masked_logprob_terms(&lc, ec).iter().sum();
                let lp_r: f64 = masked_logprob_terms(&lr_, er).iter().sum();
                Ok::<_, ModelError>((lp_c, lp_r, lc, cc.unwrap(), lr_, cr.unwrap()))
            });
            let mut fwd_ok = Vec::with_capacity(micro.len());
            for r in fwds {
                fwd_ok.push(r?);
            }

            // Phase B: per-pair loss values and log-ratio coefficients.
            let mut coeffs = Vec::with_capacity(micro.len());
            for (bi, &pi) in micro.iter().enumerate() {
                let (lp_c, lp_r, ..) = fwd_ok[bi];
                let (rc, rr) = ref_train[pi];
                let pl = PairLogps {
                    policy_chosen: lp_c,
                    policy_rejected: lp_r,
                    ref_chosen: rc,
                    ref_rejected: rr,
                };
                let (loss, g) = pair_loss_and_grad(&cfg.loss, &pl, kl);
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { step });
                }
                window_loss += loss;
                window_pairs += 1;
                coeffs.push(g);
            }

            // Phase C: backward per pair, then an ordered reduction.
            let pair_grads = rt.par_map(micro.len(), &|i| {
                let (_, _, lc, cc, lr_, cr) = &fwd_ok[i];
                let (ec, er) = &train_encs[micro[i]];
                let mut g = alloc::vec![0.0; grad.len()];
                backward_completion(&policy, ec, lc, cc, coeffs[i].d_chosen, &mut g);
                backward_completion(&policy, er, lr_, cr, coeffs[i].d_rejected, &mut g);
                g
            });
            ordered_add(&mut grad, &pair_grads);
            acc_pairs += micro.len();
            acc_micro += 1;

            if acc_micro == cfg.grad_accum || mi + 1 == n_micro {
                for g in grad.iter_mut() {
                    *g /= acc_pairs as f64;
                }
                let lr = lr_at(cfg.lr, step, total_steps);
                adam.step(policy.data_mut(), &grad, lr);
                grad.fill(0.0);
                acc_pairs = 0;
                acc_micro = 0;
                step += 1;
                if step % cfg.eval_every == 0 || step == total_steps {
                    let window = (window_pairs > 0).then(|| window_loss / window_pairs as f64);
                    record(step, window, &policy, &mut log, &mut best)?;
                    window_loss = 0.0;
                    window_pairs = 0;
                }
            }
        }
    }
    if log.records.last().map(|r| r.step) != Some(step) {
        let window = (window_pairs > 0).then(|| window_loss / window_pairs as f64);
        record(step, window, &policy, &mut log, &mut best)?;
    }

    let (val_loss, best_step, best_params) = best.expect("at least the step-0 record exists");
    Ok((
        ModelCheckpoint {
            config: model_cfg,
            params: best_params,
            provenance: Provenance {
                phase: Phase::FineTuned,
                loss_variant: Some(cfg.loss.variant),
                beta: Some(cfg.loss.beta),
                lr0: cfg.lr,
                total_steps,
                epochs: cfg.epochs,
                step: best_step,
                validation_loss: val_loss,
            },
        },
        log,
    ))
}
