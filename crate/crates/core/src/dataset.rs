//! Preference-pair construction from scored candidates.
//!
//! Candidates are grouped by (target, CDR3) keeping the best-scoring variant,
//! thresholded into good (score > t_c) and poor (score < t_r) performers, and
//! each good performer is paired with up to `n` rejected partners sampled
//! without replacement, with `k` other good performers as context. Scores in
//! `[t_r, t_c]` are unused.
//!
//! The train/validation split is a partition of the CDR3 *string* universe by
//! seeded hash. A pair belongs to a side only if every CDR3 it mentions
//! (context, chosen, rejected) lives there; anything straddling the partition
//! is discarded. The pipeline entry point [`build_dataset`] partitions the
//! universe first and builds pairs within each side, so nothing is wasted and
//! the two sides stay fully disjoint by construction.
//!
//! Every sampling decision derives its RNG stream from
//! (seed, target, chosen CDR3), so output is independent of iteration order
//! and thread count, and byte-identical across runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::{fnv1a64, mix, Rng};
use crate::seq::Cdr3Seq;

/// One scored library member: a CDR3 tested against a target, with the
/// scalar performance score from the assay (or the synthetic oracle).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub target_id: String,
    pub cdr3: Cdr3Seq,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    /// Chosen threshold: good performers score strictly above this.
    pub t_c: f64,
    /// Rejected threshold: poor performers score strictly below this.
    pub t_r: f64,
    /// Maximum pairs per good performer.
    pub n_pairs: usize,
    /// Context size (good performers per prompt).
    pub k_context: usize,
    /// Fraction of the CDR3 universe held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            t_c: 0.0,
            t_r: 0.0,
            n_pairs: 10,
            k_context: 5,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    InvalidThresholds { t_c: f64, t_r: f64 },
    InvalidField(&'static str),
    DegenerateSplit { train: usize, val: usize },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::InvalidThresholds { t_c, t_r } => {
                write!(f, "thresholds must satisfy t_r <= t_c, got t_r={t_r}, t_c={t_c}")
            }
            DatasetError::InvalidField(name) => write!(f, "invalid dataset config field {name}"),
            DatasetError::DegenerateSplit { train, val } => {
                write!(f, "degenerate split: {train} train pairs, {val} val pairs")
            }
        }
    }
}

impl core::error::Error for DatasetError {}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.t_r <= self.t_c) {
            return Err(DatasetError::InvalidThresholds { t_c: self.t_c, t_r: self.t_r });
        }
        if self.n_pairs < 1 {
            return Err(DatasetError::InvalidField("n_pairs"));
        }
        if self.k_context < 1 {
            return Err(DatasetError::InvalidField("k_context"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(DatasetError::InvalidField("val_fraction"));
        }
        Ok(())
    }
}

/// (context good performers, chosen good performer, rejected poor performer)
/// for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub target_id: String,
    pub context: Vec<Cdr3Seq>,
    pub chosen: Cdr3Seq,
    pub rejected: Cdr3Seq,
}

/// Scores grouped per target and CDR3 (maximum over duplicate variants).
pub type Grouped = BTreeMap<String, BTreeMap<Cdr3Seq, f64>>;

/// Groups candidates by (target, CDR3), retaining the maximum score among
/// duplicates.
pub fn group_by_cdr3(cands: &[ScoredCandidate]) -> Grouped {
    let mut grouped: Grouped = BTreeMap::new();
    for c in cands {
        let per_target = grouped.entry(c.target_id.clone()).or_default();
        per_target
            .entry(c.cdr3.clone())
            .and_modify(|s| {
                if c.score > *s {
                    *s = c.score;
                }
            })
            .or_insert(c.score);
    }
    grouped
}

/// Why a target contributed no pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    NoGoodPerformers,
    TooFewGoodForContext { good: usize, required: usize },
    NoPoorPerformers,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NoGoodPerformers => write!(f, "no good performers"),
            SkipReason::TooFewGoodForContext { good, required } => {
                write!(f, "{good} good performers but k+1={required} required")
            }
            SkipReason::NoPoorPerformers => write!(f, "no poor performers"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutcome {
    pub pairs: Vec<PreferencePair>,
    /// Targets that contributed nothing, with the reason.
    pub skipped: Vec<(String, SkipReason)>,
}

/// Builds up to `n_pairs` preference pairs per good performer from grouped
/// scores. Deterministic given the seed: each good performer draws from its
/// own RNG stream keyed by (seed, target, cdr3).
pub fn build_pairs(grouped: &Grouped, cfg: &DatasetConfig) -> BuildOutcome {
    let mut out = BuildOutcome::default();
    for (target, scores) in grouped {
        let good: Vec<&Cdr3Seq> = scores
            .iter()
            .filter(|(_, &s)| s > cfg.t_c)
            .map(|(c, _)| c)
            .collect();
        let poor: Vec<&Cdr3Seq> = scores
            .iter()
            .filter(|(_, &s)| s < cfg.t_r)
            .map(|(c, _)| c)
            .collect();
        if good.is_empty() {
            out.skipped.push((target.clone(), SkipReason::NoGoodPerformers));
            continue;
        }
        if good.len() < cfg.k_context + 1 {
            out.skipped.push((
                target.clone(),
                SkipReason::TooFewGoodForContext { good: good.len(), required: cfg.k_context + 1 },
            ));
            continue;
        }
        if poor.is_empty() {
            out.skipped.push((target.clone(), SkipReason::NoPoorPerformers));
            continue;
        }
        let target_salt = fnv1a64(target.as_bytes());
        for (gi, &chosen) in good.iter().enumerate() {
            use alloc::string::ToString;
            let mut rng = Rng::seed_from_u64(mix(
                cfg.seed,
                mix(target_salt, fnv1a64(chosen.to_string().as_bytes())),
            ));
            // Rejected partners: without replacement, capped at the pool size.
            let n_here = cfg.n_pairs.min(poor.len());
            let rejected_idx = rng.sample_indices(poor.len(), n_here);
            // Context pool: all good performers except the chosen one.
            let pool: Vec<usize> = (0..good.len()).filter(|&i| i != gi).collect();
            for &ri in &rejected_idx {
                let ctx_picks = rng.sample_indices(pool.len(), cfg.k_context);
                let context: Vec<Cdr3Seq> =
                    ctx_picks.iter().map(|&i| good[pool[i]].clone()).collect();
                out.pairs.push(PreferencePair {
                    target_id: target.clone(),
                    context,
                    chosen: chosen.clone(),
                    rejected: poor[ri].clone(),
                });
            }
        }
    }
    out
}

/// Whether a CDR3 string falls on the validation side of the partition.
pub fn is_val_cdr3(seed: u64, cdr3: &Cdr3Seq, val_fraction: f64) -> bool {
    use alloc::string::ToString;
    let h = mix(seed ^ 0x7370_6c69_74, fnv1a64(cdr3.to_string().as_bytes()));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64) < val_fraction
}

/// Splits grouped scores into train-side and val-side universes by the CDR3
/// partition.
pub fn partition_universe(grouped: &Grouped, cfg: &DatasetConfig) -> (Grouped, Grouped) {
    let mut train: Grouped = BTreeMap::new();
    let mut val: Grouped = BTreeMap::new();
    for (target, scores) in grouped {
        for (cdr3, &score) in scores {
            let side = if is_val_cdr3(cfg.seed, cdr3, cfg.val_fraction) {
                &mut val
            } else {
                &mut train
            };
            side.entry(target.clone()).or_default().insert(cdr3.clone(), score);
        }
    }
    (train, val)
}

#[derive(Debug, Clone, Default)]
pub struct SplitOutcome {
    pub train: Vec<PreferencePair>,
    pub val: Vec<PreferencePair>,
    /// Pairs discarded because their CDR3s straddled the partition.
    pub discarded: usize,
}

fn pair_side(pair: &PreferencePair, cfg: &DatasetConfig) -> Option<bool> {
    let mut all = alloc::vec![&pair.chosen, &pair.rejected];
    all.extend(pair.context.iter());
    let first = is_val_cdr3(cfg.seed, all[0], cfg.val_fraction);
    all.iter()
        .all(|c| is_val_cdr3(cfg.seed, c, cfg.val_fraction) == first)
        .then_some(first)
}

/// Assigns pairs to train/val by the CDR3 partition, discarding pairs whose
/// CDR3s straddle it. Fails if either side ends up empty.
pub fn split_train_val(
    pairs: Vec<PreferencePair>,
    cfg: &DatasetConfig,
) -> Result<SplitOutcome, DatasetError> {
    let mut out = SplitOutcome::default();
    for pair in pairs {
        match pair_side(&pair, cfg) {
            Some(true) => out.val.push(pair),
            Some(false) => out.train.push(pair),
            None => out.discarded += 1,
        }
    }
    if out.train.is_empty() || out.val.is_empty() {
        return Err(DatasetError::DegenerateSplit {
            train: out.train.len(),
            val: out.val.len(),
        });
    }
    Ok(out)
}

/// Per-side skip reports from the partition-aware pipeline.
#[derive(Debug, Clone, Default)]
pub struct DatasetReport {
    pub skipped_train: Vec<(String, SkipReason)>,
    pub skipped_val: Vec<(String, SkipReason)>,
}

/// Pipeline entry point: partition the CDR3 universe, build pairs within
/// each side, and verify the split. The verification pass re-classifies every
/// constructed pair through [`split_train_val`]'s rule, so the disjointness
/// guarantee is checked, not assumed.
pub fn build_dataset(
    grouped: &Grouped,
    cfg: &DatasetConfig,
) -> Result<(SplitOutcome, DatasetReport), DatasetError> {
    cfg.validate()?;
    let (g_train, g_val) = partition_universe(grouped, cfg);
    let train_built = build_pairs(&g_train, cfg);
    let val_built = build_pairs(&g_val, cfg);
    let mut all = train_built.pairs;
    all.extend(val_built.pairs);
    let outcome = split_train_val(all, cfg)?;
    debug_assert_eq!(outcome.discarded, 0, "partition-aware construction cannot straddle");
    Ok((
        outcome,
        DatasetReport { skipped_train: train_built.skipped, skipped_val: val_built.skipped },
    ))
}

/// Distinct CDR3 strings mentioned by a set of pairs (contexts included).
pub fn cdr3_universe(pairs: &[PreferencePair]) -> BTreeSet<Cdr3Seq> {
    let mut set = BTreeSet::new();
    for p in pairs {
        set.insert(p.chosen.clone());
        set.insert(p.rejected.clone());
        for c in &p.context {
            set.insert(c.clone());
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    fn seq(s: &str) -> Cdr3Seq {
        Cdr3Seq::parse(s).unwrap()
    }

    fn cand(target: &str, cdr3: &str, score: f64) -> ScoredCandidate {
        ScoredCandidate { target_id: target.to_string(), cdr3: seq(cdr3), score }
    }

    /// Distinct sequences of length 5: AAAA + one varying letter pair.
    fn gen_seqs(n: usize) -> Vec<Cdr3Seq> {
        let letters = crate::seq::ALPHABET;
        (0..n)
            .map(|i| {
                let a = letters[i % 20] as char;
                let b = letters[(i / 20) % 20] as char;
                seq(&format!("AAA{a}{b}"))
            })
            .collect()
    }

    #[test]
    fn grouping_retains_maximum() {
        let cands = [
            cand("t1", "ACDEF", 0.2),
            cand("t1", "ACDEF", 0.9),
            cand("t1", "GHIKL", 0.5),
            cand("t2", "ACDEF", 0.1),
        ];
        let g = group_by_cdr3(&cands);
        assert_eq!(g["t1"][&seq("ACDEF")], 0.9);
        assert_eq!(g["t1"][&seq("GHIKL")], 0.5);
        // Same CDR3 under another target is an independent entry.
        assert_eq!(g["t2"][&seq("ACDEF")], 0.1);
    }

    fn base_cfg() -> DatasetConfig {
        DatasetConfig { t_c: 0.7, t_r: 0.3, n_pairs: 10, k_context: 5, val_fraction: 0.25, seed: 42 }
    }

    #[test]
    fn six_good_one_poor_yields_six_pairs() {
        // |good|=6, |poor|=1, n=10, k=5: one pair per good performer because
        // the rejected pool is exhausted at one draw each.
        let seqs = gen_seqs(7);
        let mut cands: Vec<ScoredCandidate> = seqs[..6]
            .iter()
            .map(|s| ScoredCandidate { target_id: "t".to_string(), cdr3: s.clone(), score: 0.9 })
            .collect();
        cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: seqs[6].clone(), score: 0.1 });
        let out = build_pairs(&group_by_cdr3(&cands), &base_cfg());
        assert_eq!(out.pairs.len(), 6);
        assert!(out.skipped.is_empty());
        for p in &out.pairs {
            assert_eq!(p.context.len(), 5);
            assert!(!p.context.contains(&p.chosen));
            assert_ne!(p.chosen, p.rejected);
            assert_eq!(p.rejected, seqs[6]);
        }
    }

    #[test]
    fn rich_poor_pool_caps_at_n() {
        // n=10, |poor|=25: exactly 10 pairs per good performer.
        let seqs = gen_seqs(31);
        let mut cands: Vec<ScoredCandidate> = seqs[..6]
            .iter()
            .map(|s| ScoredCandidate { target_id: "t".to_string(), cdr3: s.clone(), score: 0.9 })
            .collect();
        for s in &seqs[6..31] {
            cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: s.clone(), score: 0.1 });
        }
        let out = build_pairs(&group_by_cdr3(&cands), &base_cfg());
        assert_eq!(out.pairs.len(), 6 * 10);
        // Rejected partners per chosen are distinct (no replacement).
        for chosen in &seqs[..6] {
            let mut rejected: Vec<&Cdr3Seq> = out
                .pairs
                .iter()
                .filter(|p| &p.chosen == chosen)
                .map(|p| &p.rejected)
                .collect();
            let n = rejected.len();
            rejected.sort();
            rejected.dedup();
            assert_eq!(rejected.len(), n);
        }
    }

    #[test]
    fn no_poor_no_pairs() {
        let seqs = gen_seqs(6);
        let cands: Vec<ScoredCandidate> = seqs
            .iter()
            .map(|s| ScoredCandidate { target_id: "t".to_string(), cdr3: s.clone(), score: 0.9 })
            .collect();
        let out = build_pairs(&group_by_cdr3(&cands), &base_cfg());
        assert!(out.pairs.is_empty());
        assert_eq!(out.skipped, alloc::vec![("t".to_string(), SkipReason::NoPoorPerformers)]);
    }

    #[test]
    fn threshold_band_is_unused() {
        // Scores in [t_r, t_c] belong to neither class (strict inequalities).
        let seqs = gen_seqs(9);
        let mut cands = Vec::new();
        for s in &seqs[..6] {
            cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: s.clone(), score: 0.9 });
        }
        // Exactly at the thresholds: excluded from both classes.
        cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: seqs[6].clone(), score: 0.7 });
        cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: seqs[7].clone(), score: 0.3 });
        cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: seqs[8].clone(), score: 0.1 });
        let out = build_pairs(&group_by_cdr3(&cands), &base_cfg());
        // Only one genuine poor performer.
        assert_eq!(out.pairs.len(), 6);
        assert!(out.pairs.iter().all(|p| p.rejected == seqs[8]));
        assert!(out.pairs.iter().all(|p| !p.context.contains(&seqs[6])));
    }

    #[test]
    fn build_is_deterministic() {
        let seqs = gen_seqs(40);
        let mut cands = Vec::new();
        for (i, s) in seqs.iter().enumerate() {
            let score = if i % 3 == 0 { 0.9 } else { 0.1 };
            cands.push(ScoredCandidate { target_id: "t".to_string(), cdr3: s.clone(), score });
            cands.push(ScoredCandidate { target_id: "u".to_string(), cdr3: s.clone(), score: 1.0 - score });
        }
        let g = group_by_cdr3(&cands);
        let cfg = base_cfg();
        let a = build_pairs(&g, &cfg);
        let b = build_pairs(&g, &cfg);
        assert_eq!(a.pairs, b.pairs);
        let c = build_pairs(&g, &DatasetConfig { seed: 43, ..cfg });
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn split_discards_straddlers_and_partitions() {
        let cfg = base_cfg();
        let seqs = gen_seqs(60);
        // Hand-build pairs: some pure, some straddling.
        let val_side: Vec<Cdr3Seq> = seqs
            .iter()
            .filter(|s| is_val_cdr3(cfg.seed, s, cfg.val_fraction))
            .cloned()
            .collect();
        let train_side: Vec<Cdr3Seq> = seqs
            .iter()
            .filter(|s| !is_val_cdr3(cfg.seed, s, cfg.val_fraction))
            .cloned()
            .collect();
        assert!(val_side.len() >= 3 && train_side.len() >= 3, "partition too lopsided for test");
        let mk = |ctx: &[Cdr3Seq], chosen: &Cdr3Seq, rejected: &Cdr3Seq| PreferencePair {
            target_id: "t".to_string(),
            context: ctx.to_vec(),
            chosen: chosen.clone(),
            rejected: rejected.clone(),
        };
        let pairs = alloc::vec![
            mk(&train_side[..1], &train_side[1], &train_side[2]),
            mk(&val_side[..1], &val_side[1], &val_side[2]),
            // context on val side, chosen on train side: straddles.
            mk(&val_side[..1], &train_side[1], &train_side[2]),
        ];
        let out = split_train_val(pairs, &cfg).unwrap();
        assert_eq!(out.train.len(), 1);
        assert_eq!(out.val.len(), 1);
        assert_eq!(out.discarded, 1);
        // No CDR3 string appears on both sides.
        let train_u = cdr3_universe(&out.train);
        let val_u = cdr3_universe(&out.val);
        assert!(train_u.intersection(&val_u).next().is_none());
    }

    #[test]
    fn degenerate_split_is_an_error() {
        let cfg = base_cfg();
        let seqs = gen_seqs(40);
        let train_side: Vec<Cdr3Seq> = seqs
            .iter()
            .filter(|s| !is_val_cdr3(cfg.seed, s, cfg.val_fraction))
            .cloned()
            .collect();
        let pairs = alloc::vec![PreferencePair {
            target_id: "t".to_string(),
            context: train_side[..1].to_vec(),
            chosen: train_side[1].clone(),
            rejected: train_side[2].clone(),
        }];
        assert!(matches!(
            split_train_val(pairs, &cfg),
            Err(DatasetError::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn build_dataset_end_to_end_disjoint_and_valid() {
        // A population large enough that both sides are viable.
        let seqs = gen_seqs(300);
        let mut cands = Vec::new();
        let mut rng = crate::rng::Rng::seed_from_u64(7);
        for (i, s) in seqs.iter().enumerate() {
            for target in ["t1", "t2"] {
                let score = if (i + rng.below(3)) % 3 == 0 { 0.8 + rng.next_f64() } else { rng.next_f64() * 0.25 };
                cands.push(ScoredCandidate { target_id: target.to_string(), cdr3: s.clone(), score });
            }
        }
        let cfg = DatasetConfig { t_c: 0.75, t_r: 0.25, n_pairs: 4, k_context: 3, val_fraction: 0.2, seed: 5 };
        let g = group_by_cdr3(&cands);
        let (out, _report) = build_dataset(&g, &cfg).unwrap();
        assert!(out.discarded == 0);
        assert!(!out.train.is_empty() && !out.val.is_empty());
        let train_u = cdr3_universe(&out.train);
        let val_u = cdr3_universe(&out.val);
        assert!(train_u.intersection(&val_u).next().is_none());
        // Every emitted pair satisfies the invariants, checked against scores.
        for p in out.train.iter().chain(&out.val) {
            assert_eq!(p.context.len(), cfg.k_context);
            assert!(!p.context.contains(&p.chosen));
            assert_ne!(p.chosen, p.rejected);
            assert!(g[&p.target_id][&p.chosen] > cfg.t_c);
            assert!(g[&p.target_id][&p.rejected] < cfg.t_r);
            for c in &p.context {
                assert!(g[&p.target_id][c] > cfg.t_c, "context members are good performers");
            }
            // Chosen/rejected score gap exceeds the threshold gap.
            assert!(
                g[&p.target_id][&p.chosen] - g[&p.target_id][&p.rejected] > cfg.t_c - cfg.t_r
            );
        }
        // Pair count per good performer never exceeds n.
        let mut per_chosen: BTreeMap<(String, Cdr3Seq), usize> = BTreeMap::new();
        for p in out.train.iter().chain(&out.val) {
            *per_chosen.entry((p.target_id.clone(), p.chosen.clone())).or_default() += 1;
        }
        assert!(per_chosen.values().all(|&n| n <= cfg.n_pairs));
    }

    #[test]
    fn config_validation() {
        let cfg = DatasetConfig { t_c: 0.2, t_r: 0.5, ..base_cfg() };
        assert!(matches!(cfg.validate(), Err(DatasetError::InvalidThresholds { .. })));
        let cfg = DatasetConfig { val_fraction: 0.0, ..base_cfg() };
        assert!(matches!(cfg.validate(), Err(DatasetError::InvalidField("val_fraction"))));
        assert!(base_cfg().validate().is_ok());
    }
}
