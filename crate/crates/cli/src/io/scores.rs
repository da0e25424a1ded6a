//! Scores TSV: header `target_id\tcdr3\tscore`, one candidate per row.

use std::path::Path;

use crate::error::CliError;
use hitmat_core::dataset::ScoredCandidate;
use hitmat_core::seq::Cdr3Seq;

pub const HEADER: &str = "target_id\tcdr3\tscore";

pub fn write_scores_tsv(path: &Path, cands: &[ScoredCandidate]) -> Result<(), CliError> {
    let mut out = String::with_capacity(cands.len() * 32 + HEADER.len() + 1);
    out.push_str(HEADER);
    out.push('\n');
    for c in cands {
        out.push_str(&format!("{}\t{}\t{}\n", c.target_id, c.cdr3, c.score));
    }
    super::write_atomic(path, out.as_bytes())
}

pub fn read_scores_tsv(path: &Path) -> Result<Vec<ScoredCandidate>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        Some((_, h)) => {
            return Err(CliError::io(format!(
                "{} row 1: expected header {HEADER:?}, found {h:?}",
                path.display()
            )))
        }
        None => return Err(CliError::io(format!("{} is empty", path.display()))),
    }
    let mut cands = Vec::new();
    for (i, line) in lines {
        let row = i + 1; // 1-based, header is row 1
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(target), Some(cdr3), Some(score), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(CliError::io(format!(
                "{} row {row}: expected 3 tab-separated fields",
                path.display()
            )));
        };
        let cdr3: Cdr3Seq = cdr3.parse().map_err(|e| {
            CliError::io(format!("{} row {row}: bad sequence: {e}", path.display()))
        })?;
        let score: f64 = score.parse().map_err(|e| {
            CliError::io(format!("{} row {row}: bad score: {e}", path.display()))
        })?;
        if !score.is_finite() {
            return Err(CliError::io(format!(
                "{} row {row}: score must be finite",
                path.display()
            )));
        }
        cands.push(ScoredCandidate { target_id: target.to_string(), cdr3, score });
    }
    Ok(cands)
}
