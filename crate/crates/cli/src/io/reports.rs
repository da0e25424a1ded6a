//! CSV/JSON reports: training logs, search rankings, loss-vs-activation
//! scatter data, the persisted oracle, and activation tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use hitmat_core::eval::{OracleConfig, ScatterReport, TargetOracle};
use hitmat_core::search::{MutantScore, RankedMutant};
use hitmat_core::seq::Cdr3Seq;
use hitmat_core::train::TrainLog;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const TRAIN_LOG_HEADER: &str =
    "step,lr,train_loss,val_loss,reward_chosen,reward_rejected,margin,accuracy";

pub fn write_train_log_csv(path: &Path, log: &TrainLog) -> Result<(), CliError> {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in &log.records {
        let d = r.diagnostics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.lr,
            opt(r.train_loss),
            r.val_loss,
            opt(d.map(|d| d.reward_chosen_mean)),
            opt(d.map(|d| d.reward_rejected_mean)),
            opt(d.map(|d| d.margin_mean)),
            opt(d.map(|d| d.preference_accuracy)),
        ));
    }
    super::write_atomic(path, out.as_bytes())
}

pub const SEARCH_HEADER: &str =
    "parent,sequence,mutations,n_mutations,avg_loss,min_perm_loss,max_perm_loss,rank,excluded_reason";

fn mutation_labels(score: &MutantScore) -> String {
    score
        .mutations
        .iter()
        .map(|m| m.label(&score.parent))
        .collect::<Vec<_>>()
        .join("+")
}

fn search_row(score: &MutantScore, rank: usize, excluded_reason: &str) -> String {
    let min = score.per_perm_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = score.per_perm_losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        score.parent,
        score.sequence,
        mutation_labels(score),
        score.mutations.len(),
        score.avg_loss,
        min,
        max,
        rank,
        excluded_reason,
    )
}

/// Search report: the parent baseline at rank 0, then the ranked prefix.
/// Excluded mutants keep their rank and carry a reason.
pub fn write_search_csv(
    path: &Path,
    baseline: &MutantScore,
    rows: &[RankedMutant],
) -> Result<(), CliError> {
    let mut out = String::from(SEARCH_HEADER);
    out.push('\n');
    out.push_str(&search_row(baseline, 0, ""));
    for r in rows {
        let reason = if r.excluded { "training-set" } else { "" };
        out.push_str(&search_row(&r.score, r.rank, reason));
    }
    super::write_atomic(path, out.as_bytes())
}

/// One parsed search-report row (enough to re-score against activations).
#[derive(Debug, Clone, PartialEq)]
pub struct SearchRow {
    pub parent: Cdr3Seq,
    pub sequence: Cdr3Seq,
    pub n_mutations: usize,
    pub avg_loss: f64,
    pub rank: usize,
    pub excluded_reason: String,
}

pub fn read_search_csv(path: &Path) -> Result<Vec<SearchRow>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SEARCH_HEADER => {}
        _ => {
            return Err(CliError::io(format!(
                "{}: not a search report (bad header)",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(CliError::io(format!(
                "{} line {lineno}: expected 9 fields, found {}",
                path.display(),
                f.len()
            )));
        }
        let bad = |what: &str| CliError::io(format!("{} line {lineno}: bad {what}", path.display()));
        rows.push(SearchRow {
            parent: f[0].parse().map_err(|_| bad("parent"))?,
            sequence: f[1].parse().map_err(|_| bad("sequence"))?,
            n_mutations: f[3].parse().map_err(|_| bad("n_mutations"))?,
            avg_loss: f[4].parse().map_err(|_| bad("avg_loss"))?,
            rank: f[7].parse().map_err(|_| bad("rank"))?,
            excluded_reason: f[8].to_string(),
        });
    }
    Ok(rows)
}

pub const SCATTER_HEADER: &str =
    "sequence,n_mutations,avg_loss,activation,pearson_r,p_value,baseline";

/// Scatter report: one row per mutant, then a summary row carrying the
/// Pearson r, its p-value, and the parent baseline activation.
pub fn write_scatter_csv(path: &Path, report: &ScatterReport) -> Result<(), CliError> {
    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},,,\n",
            r.sequence, r.n_mutations, r.avg_loss, r.activation
        ));
    }
    out.push_str(&format!(
        "summary,,,,{},{},{}\n",
        opt(report.r),
        opt(report.p),
        report.baseline
    ));
    super::write_atomic(path, out.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct OracleWire {
    id: String,
    seed: u64,
    len_min: usize,
    len_max: usize,
    noise_sd: f64,
    position_weights: Vec<Vec<f64>>,
    motif_bonuses: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize)]
struct OracleFileWire {
    targets: Vec<OracleWire>,
}

/// Persists the per-target oracles so later commands can compute noiseless
/// fitness for any candidate.
pub fn write_oracle_json(path: &Path, targets: &[TargetOracle]) -> Result<(), CliError> {
    let wire = OracleFileWire {
        targets: targets
            .iter()
            .map(|t| OracleWire {
                id: t.id.clone(),
                seed: t.oracle.seed,
                len_min: t.oracle.len_min,
                len_max: t.oracle.len_max,
                noise_sd: t.oracle.noise_sd,
                position_weights: t.oracle.position_weights.iter().map(|r| r.to_vec()).collect(),
                motif_bonuses: t
                    .oracle
                    .motif_bonuses
                    .iter()
                    .map(|(m, b)| (m.to_string(), *b))
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&wire).expect("oracle serializes");
    super::write_atomic(path, json.as_bytes())
}

pub fn read_oracle_json(path: &Path) -> Result<BTreeMap<String, OracleConfig>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let wire: OracleFileWire = serde_json::from_str(&text)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for t in wire.targets {
        let mut position_weights = Vec::with_capacity(t.position_weights.len());
        for row in &t.position_weights {
            let arr: [f64; 20] = row.as_slice().try_into().map_err(|_| {
                CliError::io(format!("{}: weight rows must have 20 entries", path.display()))
            })?;
            position_weights.push(arr);
        }
        let motif_bonuses = t
            .motif_bonuses
            .iter()
            .map(|(m, b)| {
                m.parse::<Cdr3Seq>()
                    .map(|m| (m, *b))
                    .map_err(|e| CliError::io(format!("{}: bad motif: {e}", path.display())))
            })
            .collect::<Result<_, _>>()?;
        let oracle = OracleConfig {
            seed: t.seed,
            len_min: t.len_min,
            len_max: t.len_max,
            position_weights,
            motif_bonuses,
            noise_sd: t.noise_sd,
        };
        oracle.validate()?;
        out.insert(t.id, oracle);
    }
    Ok(out)
}

pub const ACTIVATIONS_HEADER: &str = "sequence\tactivation";

pub fn write_activations_tsv(
    path: &Path,
    acts: &BTreeMap<Cdr3Seq, f64>,
) -> Result<(), CliError> {
    let mut out = String::from(ACTIVATIONS_HEADER);
    out.push('\n');
    for (seq, v) in acts {
        out.push_str(&format!("{seq}\t{v}\n"));
    }
    super::write_atomic(path, out.as_bytes())
}

pub fn read_activations_tsv(path: &Path) -> Result<BTreeMap<Cdr3Seq, f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == ACTIVATIONS_HEADER => {}
        _ => {
            return Err(CliError::io(format!(
                "{}: expected header {ACTIVATIONS_HEADER:?}",
                path.display()
            )))
        }
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (seq, v) = line.split_once('\t').ok_or_else(|| {
            CliError::io(format!("{} line {lineno}: expected two fields", path.display()))
        })?;
        let seq: Cdr3Seq = seq
            .parse()
            .map_err(|e| CliError::io(format!("{} line {lineno}: {e}", path.display())))?;
        let v: f64 = v
            .parse()
            .map_err(|e| CliError::io(format!("{} line {lineno}: bad value: {e}", path.display())))?;
        out.insert(seq, v);
    }
    Ok(out)
}

/// Summary statistics emitted by build-dataset.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_train: usize,
    pub n_val: usize,
    pub discarded_straddlers: usize,
    pub pairs_per_target: BTreeMap<String, usize>,
    pub skipped: Vec<SkippedEntry>,
    pub score_gap_histogram: Histogram,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub target: String,
    pub side: String,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Histogram {
        if values.is_empty() {
            return Histogram { min: 0.0, max: 0.0, counts: vec![0; bins] };
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0usize; bins];
        let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
        for &v in values {
            let b = (((v - min) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { min, max, counts }
    }
}

pub fn write_stats_json(path: &Path, stats: &DatasetStats) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(stats).expect("stats serialize");
    super::write_atomic(path, json.as_bytes())
}
