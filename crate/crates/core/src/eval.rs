//! Synthetic fitness oracle, plate normalization, and correlation analysis.
//!
//! The oracle stands in for the wet-lab assay: fitness is a sum of hidden
//! per-position residue weights plus bonuses for contained motifs, with
//! optional Gaussian read noise. It is smooth under single/double mutation
//! (so hit maturation is meaningful) yet rich enough that a broken model
//! pipeline shows up as a missing correlation.
//!
//! Pearson p-values use the exact Student-t relation
//! `t = r*sqrt((n-2)/(1-r^2))` through the regularized incomplete beta
//! function; a seeded permutation test is provided as a cross-check for the
//! small plates where the t approximation sits at its edge.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::ScoredCandidate;
use crate::rng::{fnv1a64, mix, Rng};
use crate::search::MutantScore;
use crate::seq::{Cdr3Seq, Residue, MAX_CDR3_LEN};

const NOISE_SALT: u64 = 0x6e6f_6973_65;
const TARGET_SALT: u64 = 0x7467_74;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    LengthOutOfRange { len: usize, min: usize, max: usize },
    MissingReference { plate: &'static str },
    ZeroReference,
    LengthMismatch { nx: usize, ny: usize },
    TooFewPoints { n: usize },
    DegenerateVariance,
    MissingActivation { sequence: String },
    Config(&'static str),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthOutOfRange { len, min, max } => {
                write!(f, "sequence length {len} outside oracle range {min}..={max}")
            }
            EvalError::MissingReference { plate } => {
                write!(f, "reference candidate missing from plate {plate}")
            }
            EvalError::ZeroReference => write!(f, "reference reads zero on plate b"),
            EvalError::LengthMismatch { nx, ny } => {
                write!(f, "series lengths differ: {nx} vs {ny}")
            }
            EvalError::TooFewPoints { n } => write!(f, "need at least 3 points, got {n}"),
            EvalError::DegenerateVariance => write!(f, "zero variance in a series"),
            EvalError::MissingActivation { sequence } => {
                write!(f, "no activation recorded for {sequence}")
            }
            EvalError::Config(name) => write!(f, "invalid oracle config field {name}"),
        }
    }
}

impl core::error::Error for EvalError {}

/// Hidden fitness landscape for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub seed: u64,
    pub len_min: usize,
    pub len_max: usize,
    /// Per-position, per-residue contribution; indexed `[position][residue]`.
    pub position_weights: Vec<[f64; 20]>,
    /// Bonus added once per motif contained as a contiguous subsequence.
    pub motif_bonuses: Vec<(Cdr3Seq, f64)>,
    /// Standard deviation of additive Gaussian read noise.
    pub noise_sd: f64,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.len_min == 0 || self.len_min > self.len_max || self.len_max > MAX_CDR3_LEN {
            return Err(EvalError::Config("len_min/len_max"));
        }
        if self.position_weights.len() < self.len_max {
            return Err(EvalError::Config("position_weights"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(EvalError::Config("noise_sd"));
        }
        if self
            .position_weights
            .iter()
            .flatten()
            .chain(self.motif_bonuses.iter().map(|(_, b)| b))
            .any(|w| !w.is_finite())
        {
            return Err(EvalError::Config("weights"));
        }
        Ok(())
    }

    /// An all-zero landscape, handy for tests.
    pub fn flat(seed: u64, len_min: usize, len_max: usize) -> Self {
        OracleConfig {
            seed,
            len_min,
            len_max,
            position_weights: alloc::vec![[0.0; 20]; len_max],
            motif_bonuses: Vec::new(),
            noise_sd: 0.0,
        }
    }
}

/// Oracle fitness of a sequence. Noise (when not `noiseless`) is derived from
/// (seed, sequence), so repeated calls agree and evaluation order is
/// irrelevant.
pub fn oracle_fitness(cfg: &OracleConfig, seq: &Cdr3Seq, noiseless: bool) -> Result<f64, EvalError> {
    if seq.len() < cfg.len_min || seq.len() > cfg.len_max {
        return Err(EvalError::LengthOutOfRange {
            len: seq.len(),
            min: cfg.len_min,
            max: cfg.len_max,
        });
    }
    let mut fitness = 0.0;
    for (p, &r) in seq.residues().iter().enumerate() {
        fitness += cfg.position_weights[p][r.index()];
    }
    for (motif, bonus) in &cfg.motif_bonuses {
        if seq.len() >= motif.len()
            && seq
                .residues()
                .windows(motif.len())
                .any(|w| w == motif.residues())
        {
            fitness += bonus;
        }
    }
    if !noiseless && cfg.noise_sd > 0.0 {
        use alloc::string::ToString;
        let mut rng =
            Rng::derive(mix(cfg.seed, NOISE_SALT), fnv1a64(seq.to_string().as_bytes()));
        fitness += rng.normal() * cfg.noise_sd;
    }
    Ok(fitness)
}

/// Generation knobs for the synthetic candidate population.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub len_min: usize,
    pub len_max: usize,
    pub noise_sd: f64,
    /// Rewarded motifs per target.
    pub n_motifs: usize,
    pub motif_bonus: f64,
    /// Standard deviation of the hidden per-position weights.
    pub weight_sd: f64,
    /// Probability a candidate gets one motif planted from the pool.
    pub plant_prob: f64,
    /// Unrewarded decoy motifs in the planting pool. Bonus and decoy motifs
    /// are planted at equal rates, so the raw corpus carries no fitness
    /// signal in its motif frequencies and the pretrained model stays
    /// fitness-agnostic.
    pub n_decoys: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            len_min: 10,
            len_max: 11,
            noise_sd: 0.3,
            n_motifs: 2,
            motif_bonus: 2.0,
            weight_sd: 0.35,
            plant_prob: 0.5,
            n_decoys: 2,
        }
    }
}

/// One synthetic target: its id, hidden oracle, and planting pool.
#[derive(Debug, Clone)]
pub struct TargetOracle {
    pub id: String,
    pub oracle: OracleConfig,
    /// Bonus motifs followed by decoys; candidates plant from this pool.
    pub plant_pool: Vec<Cdr3Seq>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthOutput {
    pub candidates: Vec<ScoredCandidate>,
    pub targets: Vec<TargetOracle>,
}

fn random_motif(rng: &mut Rng) -> Cdr3Seq {
    let residues: Vec<Residue> = (0..3)
        .map(|_| Residue::from_index(rng.below(Residue::COUNT)).unwrap())
        .collect();
    Cdr3Seq::new(residues).unwrap()
}

fn target_oracle(params: &SynthParams, t: usize) -> TargetOracle {
    use alloc::format;
    let seed = mix(params.seed, mix(TARGET_SALT, t as u64));
    let mut rng = Rng::seed_from_u64(seed);
    let mut position_weights = alloc::vec![[0.0f64; 20]; params.len_max];
    for row in &mut position_weights {
        for w in row.iter_mut() {
            *w = rng.normal() * params.weight_sd;
        }
    }
    let mut plant_pool = Vec::new();
    let mut motif_bonuses = Vec::new();
    while plant_pool.len() < params.n_motifs + params.n_decoys {
        let m = random_motif(&mut rng);
        if plant_pool.contains(&m) {
            continue;
        }
        if plant_pool.len() < params.n_motifs {
            motif_bonuses.push((m.clone(), params.motif_bonus));
        }
        plant_pool.push(m);
    }
    TargetOracle {
        id: format!("t{t}"),
        oracle: OracleConfig {
            seed,
            len_min: params.len_min,
            len_max: params.len_max,
            position_weights,
            motif_bonuses,
            noise_sd: params.noise_sd,
        },
        plant_pool,
    }
}

/// Generates `n_targets` independent targets with `n_per_target` scored
/// candidates each. Deterministic given the seed; candidates draw their RNG
/// stream from (target seed, index) so order never matters.
pub fn generate_scored_candidates(
    params: &SynthParams,
    n_per_target: usize,
    n_targets: usize,
) -> Result<SynthOutput, EvalError> {
    if n_per_target == 0 {
        return Err(EvalError::Config("n_per_target"));
    }
    if n_targets == 0 {
        return Err(EvalError::Config("n_targets"));
    }
    if params.len_min == 0 || params.len_min > params.len_max {
        return Err(EvalError::Config("len_min/len_max"));
    }
    if !(params.plant_prob >= 0.0 && params.plant_prob <= 1.0) {
        return Err(EvalError::Config("plant_prob"));
    }
    let mut out = SynthOutput::default();
    for t in 0..n_targets {
        let target = target_oracle(params, t);
        target.oracle.validate()?;
        for i in 0..n_per_target {
            let mut rng = Rng::derive(target.oracle.seed, 0x63616e_64 ^ i as u64);
            let len = params.len_min + rng.below(params.len_max - params.len_min + 1);
            let mut residues: Vec<Residue> = (0..len)
                .map(|_| Residue::from_index(rng.below(Residue::COUNT)).unwrap())
                .collect();
            if len >= 3 && rng.next_f64() < params.plant_prob {
                let motif = &target.plant_pool[rng.below(target.plant_pool.len())];
                let at = rng.below(len - motif.len() + 1);
                residues[at..at + motif.len()].copy_from_slice(motif.residues());
            }
            let cdr3 = Cdr3Seq::new(residues).unwrap();
            let score = oracle_fitness(&target.oracle, &cdr3, false)?;
            out.candidates.push(ScoredCandidate { target_id: target.id.clone(), cdr3, score });
        }
        out.targets.push(target);
    }
    Ok(out)
}

/// Two assay plates sharing a reference candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatePair {
    pub reference_id: String,
    pub plate_a: BTreeMap<String, f64>,
    pub plate_b: BTreeMap<String, f64>,
}

/// Rescales plate B so the shared reference matches plate A exactly
/// (multiplicative, ratio at the reference); plate A passes through
/// unchanged and wins collisions in the merged map.
pub fn plate_normalize(pp: &PlatePair) -> Result<BTreeMap<String, f64>, EvalError> {
    let a_ref = *pp
        .plate_a
        .get(&pp.reference_id)
        .ok_or(EvalError::MissingReference { plate: "a" })?;
    let b_ref = *pp
        .plate_b
        .get(&pp.reference_id)
        .ok_or(EvalError::MissingReference { plate: "b" })?;
    if b_ref == 0.0 {
        return Err(EvalError::ZeroReference);
    }
    let scale = a_ref / b_ref;
    let mut out = BTreeMap::new();
    for (id, &v) in &pp.plate_b {
        let normalized = if *id == pp.reference_id { a_ref } else { v * scale };
        out.insert(id.clone(), normalized);
    }
    for (id, &v) in &pp.plate_a {
        out.insert(id.clone(), v);
    }
    Ok(out)
}

const LG_COEF: [f64; 8] = [
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Log-gamma via the Lanczos approximation (g = 7).
fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        let pi = core::f64::consts::PI;
        return libm::log(pi / libm::sin(pi * x)) - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in LG_COEF.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * libm::log(2.0 * core::f64::consts::PI) + (x + 0.5) * libm::log(t) - t + libm::log(acc)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 3e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = libm::exp(
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * libm::log(x) + b * libm::log(1.0 - x),
    );
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
fn student_t_two_sided(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Sample Pearson correlation with a two-sided p-value from
/// `t = r*sqrt((n-2)/(1-r^2))` against Student-t with n-2 degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch { nx: xs.len(), ny: ys.len() });
    }
    let n = xs.len();
    if n < 3 {
        return Err(EvalError::TooFewPoints { n });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let r = (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t = r * libm::sqrt(df / (1.0 - r * r));
        student_t_two_sided(t, df)
    };
    Ok((r, p))
}

/// Seeded permutation-test p-value for the Pearson correlation: the fraction
/// of `n_shuffles` shuffles of `ys` whose |r| reaches the observed |r|, with
/// the +1 correction.
pub fn pearson_permutation(
    xs: &[f64],
    ys: &[f64],
    n_shuffles: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let (r_obs, _) = pearson(xs, ys)?;
    let mut perm = ys.to_vec();
    let mut rng = Rng::derive(seed, 0x7065_726d);
    let mut hits = 0usize;
    for _ in 0..n_shuffles {
        rng.shuffle(&mut perm);
        let (r, _) = match pearson(xs, &perm) {
            Ok(v) => v,
            // A degenerate shuffle cannot happen since variance is permutation
            // invariant, but keep the branch total.
            Err(_) => (0.0, 1.0),
        };
        if r.abs() >= r_obs.abs() {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (n_shuffles + 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub sequence: Cdr3Seq,
    pub n_mutations: usize,
    pub avg_loss: f64,
    pub activation: f64,
}

/// Data behind the loss-vs-activation scatter report: one row per scored
/// mutant plus the correlation summary and the parent baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterReport {
    pub rows: Vec<ScatterRow>,
    /// Pearson r/p over (avg_loss, activation); absent with fewer than 3
    /// points or degenerate variance.
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub baseline: f64,
}

/// Joins scored mutants with their activations. Every scored mutant must
/// have an activation.
pub fn scatter_summary(
    scores: &[MutantScore],
    activations: &BTreeMap<Cdr3Seq, f64>,
    baseline: f64,
) -> Result<ScatterReport, EvalError> {
    use alloc::string::ToString;
    let mut rows = Vec::with_capacity(scores.len());
    for s in scores {
        let activation = *activations.get(&s.sequence).ok_or_else(|| {
            EvalError::MissingActivation { sequence: s.sequence.to_string() }
        })?;
        rows.push(ScatterRow {
            sequence: s.sequence.clone(),
            n_mutations: s.mutations.len(),
            avg_loss: s.avg_loss,
            activation,
        });
    }
    let losses: Vec<f64> = rows.iter().map(|r| r.avg_loss).collect();
    let acts: Vec<f64> = rows.iter().map(|r| r.activation).collect();
    let (r, p) = match pearson(&losses, &acts) {
        Ok((r, p)) => (Some(r), Some(p)),
        Err(_) => (None, None),
    };
    Ok(ScatterReport { rows, r, p, baseline })
}
