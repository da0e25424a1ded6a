//! Preference pairs as JSON Lines: one object per line with fields
//! `target_id`, `context` (array of strings), `chosen`, `rejected`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use hitmat_core::dataset::PreferencePair;
use hitmat_core::seq::Cdr3Seq;

#[derive(Serialize, Deserialize)]
struct WirePair {
    target_id: String,
    context: Vec<String>,
    chosen: String,
    rejected: String,
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[PreferencePair]) -> Result<(), CliError> {
    let mut out = String::new();
    for p in pairs {
        let wire = WirePair {
            target_id: p.target_id.clone(),
            context: p.context.iter().map(|c| c.to_string()).collect(),
            chosen: p.chosen.to_string(),
            rejected: p.rejected.to_string(),
        };
        out.push_str(&serde_json::to_string(&wire).expect("pair serializes"));
        out.push('\n');
    }
    super::write_atomic(path, out.as_bytes())
}

pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<PreferencePair>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let wire: WirePair = serde_json::from_str(line)
            .map_err(|e| CliError::io(format!("{} line {lineno}: {e}", path.display())))?;
        let parse_seq = |s: &str, what: &str| -> Result<Cdr3Seq, CliError> {
            s.parse().map_err(|e| {
                CliError::io(format!("{} line {lineno}: bad {what}: {e}", path.display()))
            })
        };
        pairs.push(PreferencePair {
            target_id: wire.target_id,
            context: wire
                .context
                .iter()
                .map(|c| parse_seq(c, "context member"))
                .collect::<Result<_, _>>()?,
            chosen: parse_seq(&wire.chosen, "chosen")?,
            rejected: parse_seq(&wire.rejected, "rejected")?,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("hitmat-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample() -> Vec<PreferencePair> {
        vec![
            PreferencePair {
                target_id: "t1".into(),
                context: vec!["ACDEF".parse().unwrap(), "GHIKL".parse().unwrap()],
                chosen: "MNPQR".parse().unwrap(),
                rejected: "STVWY".parse().unwrap(),
            },
            PreferencePair {
                target_id: "t2".into(),
                context: vec!["WY".parse().unwrap()],
                chosen: "AC".parse().unwrap(),
                rejected: "DD".parse().unwrap(),
            },
        ]
    }

    #[test]
    fn lossless_round_trip() {
        let path = tmpfile("pairs_rt.jsonl");
        let pairs = sample();
        write_pairs_jsonl(&path, &pairs).unwrap();
        assert_eq!(read_pairs_jsonl(&path).unwrap(), pairs);
        // Field names exactly as specified.
        let first_line = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        for field in ["\"target_id\"", "\"context\"", "\"chosen\"", "\"rejected\""] {
            assert!(first_line.contains(field), "{first_line}");
        }
    }

    #[test]
    fn empty_list_round_trips() {
        let path = tmpfile("pairs_empty.jsonl");
        write_pairs_jsonl(&path, &[]).unwrap();
        assert!(read_pairs_jsonl(&path).unwrap().is_empty());
    }

    #[test]
    fn corrupt_line_is_numbered() {
        let path = tmpfile("pairs_bad.jsonl");
        let pairs = sample();
        write_pairs_jsonl(&path, &pairs).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        std::fs::write(&path, text).unwrap();
        let err = read_pairs_jsonl(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
