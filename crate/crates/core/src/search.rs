//! Hit-maturation search around a parent CDR3.
//!
//! Candidates are ranked by completion cross-entropy averaged over *all*
//! orderings of the context set (lower loss = higher likelihood = better).
//! The context set is canonicalized by sorting before its permutations are
//! enumerated in lexicographic order, so the average is bit-identical no
//! matter how the caller ordered the members.
//!
//! Two generators feed the scorer:
//! - greedy diversification: a single forward pass per recursion proposes the
//!   top-k substitutions left-to-right, recursing with one fewer substitution
//!   allowed; position 0 of the remaining suffix is never substituted, which
//!   is one reason exhaustive search can find better candidates.
//! - exhaustive enumeration of all single (19L) and double (C(L,2)*361)
//!   substitution mutants.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::model::{completion_cross_entropy, forward_logits, ModelError, Parameters};
use crate::runtime::Runtime;
use crate::seq::{
    apply_mutations, encode_pair, Cdr3Seq, EncodeError, Mutation, Residue, Vocab,
};

/// Largest context set: k! permutations must stay enumerable (6! = 720).
pub const MAX_CONTEXT_K: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    EmptyContext,
    ContextTooLarge { k: usize, max: usize },
    DuplicateContextMember,
    Model(ModelError),
    Encode(EncodeError),
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::EmptyContext => write!(f, "context set is empty"),
            SearchError::ContextTooLarge { k, max } => {
                write!(f, "context of {k} members exceeds the permutation limit {max}")
            }
            SearchError::DuplicateContextMember => write!(f, "context members must be distinct"),
            SearchError::Model(e) => write!(f, "model error: {e}"),
            SearchError::Encode(e) => write!(f, "encoding error: {e}"),
        }
    }
}

impl core::error::Error for SearchError {}

impl From<ModelError> for SearchError {
    fn from(e: ModelError) -> Self {
        SearchError::Model(e)
    }
}

impl From<EncodeError> for SearchError {
    fn from(e: EncodeError) -> Self {
        SearchError::Encode(e)
    }
}

/// An unordered set of distinct context CDR3s, held in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSet {
    members: Vec<Cdr3Seq>,
}

impl ContextSet {
    pub fn new(mut members: Vec<Cdr3Seq>) -> Result<Self, SearchError> {
        if members.is_empty() {
            return Err(SearchError::EmptyContext);
        }
        if members.len() > MAX_CONTEXT_K {
            return Err(SearchError::ContextTooLarge { k: members.len(), max: MAX_CONTEXT_K });
        }
        members.sort();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(SearchError::DuplicateContextMember);
        }
        Ok(ContextSet { members })
    }

    pub fn members(&self) -> &[Cdr3Seq] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn n_permutations(&self) -> usize {
        (1..=self.members.len()).product()
    }
}

/// Advances `idx` to the next lexicographic permutation; false after the last.
fn next_permutation(idx: &mut [usize]) -> bool {
    if idx.len() < 2 {
        return false;
    }
    let mut i = idx.len() - 1;
    while i > 0 && idx[i - 1] >= idx[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = idx.len() - 1;
    while idx[j] <= idx[i - 1] {
        j -= 1;
    }
    idx.swap(i - 1, j);
    idx[i..].reverse();
    true
}

/// How a scored candidate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchSource {
    Greedy,
    Exhaustive,
    /// The unmutated parent, scored as the reference line.
    Baseline,
}

/// A candidate with its per-permutation losses and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MutantScore {
    pub parent: Cdr3Seq,
    pub mutations: Vec<Mutation>,
    pub sequence: Cdr3Seq,
    pub per_perm_losses: Vec<f64>,
    pub avg_loss: f64,
    pub source: SearchSource,
}

fn per_perm_losses(
    params: &Parameters,
    ctx: &ContextSet,
    candidate: &Cdr3Seq,
) -> Result<Vec<f64>, SearchError> {
    let max_len = params.config().max_len;
    let k = ctx.k();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut losses = Vec::with_capacity(ctx.n_permutations());
    loop {
        let ordered: Vec<Cdr3Seq> = idx.iter().map(|&i| ctx.members[i].clone()).collect();
        let enc = encode_pair(&ordered, candidate, max_len)?;
        losses.push(completion_cross_entropy(params, &enc)?);
        if !next_permutation(&mut idx) {
            break;
        }
    }
    debug_assert_eq!(losses.len(), ctx.n_permutations());
    Ok(losses)
}

/// Scores one candidate: completion cross-entropy under every ordering of
/// the context set, plus the mean. The baseline form (no mutations); search
/// drivers fill in mutation metadata.
pub fn score_candidate(
    params: &Parameters,
    ctx: &ContextSet,
    candidate: &Cdr3Seq,
) -> Result<MutantScore, SearchError> {
    let per_perm = per_perm_losses(params, ctx, candidate)?;
    let avg_loss = per_perm.iter().sum::<f64>() / per_perm.len() as f64;
    Ok(MutantScore {
        parent: candidate.clone(),
        mutations: Vec::new(),
        sequence: candidate.clone(),
        per_perm_losses: per_perm,
        avg_loss,
        source: SearchSource::Baseline,
    })
}

/// All substitution mutants of `parent` within `max_subs` (1 or 2) changes:
/// 19L singles, plus C(L,2)*361 doubles when `max_subs` is 2. The parent is
/// excluded; the mutant -> (positions, residues) map is bijective. Order is
/// deterministic: singles position-major then residue-alphabetical, then
/// doubles likewise.
pub fn enumerate_mutants(parent: &Cdr3Seq, max_subs: usize) -> Vec<Cdr3Seq> {
    assert!((1..=2).contains(&max_subs), "max_subs must be 1 or 2");
    let len = parent.len();
    let mut out = Vec::new();
    for i in 0..len {
        for r in Residue::all() {
            if r != parent.get(i).unwrap() {
                out.push(
                    apply_mutations(parent, &[Mutation { position: i, replacement: r }])
                        .expect("valid single mutation"),
                );
            }
        }
    }
    if max_subs == 2 && len >= 2 {
        for i in 0..len {
            for j in i + 1..len {
                for ri in Residue::all() {
                    if ri == parent.get(i).unwrap() {
                        continue;
                    }
                    for rj in Residue::all() {
                        if rj == parent.get(j).unwrap() {
                            continue;
                        }
                        out.push(
                            apply_mutations(
                                parent,
                                &[
                                    Mutation { position: i, replacement: ri },
                                    Mutation { position: j, replacement: rj },
                                ],
                            )
                            .expect("valid double mutation"),
                        );
                    }
                }
            }
        }
    }
    out
}

/// Greedy diversification output: every emitted candidate except the parent,
/// deduplicated; the parent is reported separately as the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub parent: Cdr3Seq,
    pub mutants: Vec<Cdr3Seq>,
}

/// Greedy left-to-right diversification. One forward pass per recursion
/// proposes, for each suffix position except the first, the `topk`
/// highest-logit substitutions read from the logit row immediately preceding
/// that position; valid ones (canonical residues differing from the
/// incumbent) are fixed and the recursion continues on the remaining suffix
/// with one fewer substitution allowed.
pub fn greedy_gen(
    params: &Parameters,
    ctx_ordered: &[Cdr3Seq],
    parent: &Cdr3Seq,
    k_subs: usize,
    topk: usize,
) -> Result<GreedyOutcome, SearchError> {
    assert!(topk >= 1, "topk must be at least 1");
    if ctx_ordered.is_empty() {
        return Err(SearchError::EmptyContext);
    }
    let mut emitted: BTreeSet<Cdr3Seq> = BTreeSet::new();
    gen_rec(
        params,
        ctx_ordered,
        &mut Vec::new(),
        parent.residues(),
        k_subs,
        topk,
        &mut emitted,
    )?;
    emitted.remove(parent);
    Ok(GreedyOutcome { parent: parent.clone(), mutants: emitted.into_iter().collect() })
}

fn gen_rec(
    params: &Parameters,
    ctx: &[Cdr3Seq],
    fixed: &mut Vec<Residue>,
    rest: &[Residue],
    k_subs: usize,
    topk: usize,
    emitted: &mut BTreeSet<Cdr3Seq>,
) -> Result<(), SearchError> {
    let mut residues = fixed.clone();
    residues.extend_from_slice(rest);
    let candidate = Cdr3Seq::new(residues).expect("length preserved");
    emitted.insert(candidate.clone());
    if k_subs == 0 || rest.len() < 2 {
        return Ok(());
    }
    let enc = encode_pair(ctx, &candidate, params.config().max_len)?;
    let logits = forward_logits(params, enc.token_ids())?;
    let base = enc.completion_start() + fixed.len();
    // Suffix positions 1..|rest|-1 inclusive: the second residue of the
    // suffix through its last. Position 0 anchors the recursion.
    for p in 1..rest.len() {
        let row = logits.row(base + p - 1);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &tok in order.iter().take(topk) {
            let Some(r) = Vocab::token_residue(tok) else {
                continue; // special tokens are never valid substitutions
            };
            if r == rest[p] {
                continue; // identity substitutions are not mutations
            }
            let keep = fixed.len();
            fixed.extend_from_slice(&rest[..p]);
            fixed.push(r);
            gen_rec(params, ctx, fixed, &rest[p + 1..], k_subs - 1, topk, emitted)?;
            fixed.truncate(keep);
        }
    }
    Ok(())
}

/// One row of the exhaustive ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedMutant {
    /// 1-based position in the global ranking (excluded mutants consume ranks).
    pub rank: usize,
    pub score: MutantScore,
    /// True when the mutant was dropped for being in the exclusion set.
    pub excluded: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SearchOutcome {
    /// Top `top_m` kept mutants, ascending average loss.
    pub kept: Vec<MutantScore>,
    /// The ranked prefix walked to fill `kept`, including excluded hits.
    pub rows: Vec<RankedMutant>,
}

/// Scores every enumerated mutant of `parent`, ranks ascending by average
/// loss (ties: fewer mutations, then lexicographic sequence), drops mutants
/// in `exclusions`, and returns the top `top_m`.
pub fn exhaustive_search(
    params: &Parameters,
    ctx: &ContextSet,
    parent: &Cdr3Seq,
    max_subs: usize,
    top_m: usize,
    exclusions: &BTreeSet<Cdr3Seq>,
    rt: &impl Runtime,
) -> Result<SearchOutcome, SearchError> {
    let mutants = enumerate_mutants(parent, max_subs);
    let scored = rt.par_map(mutants.len(), &|i| {
        let seq = &mutants[i];
        per_perm_losses(params, ctx, seq).map(|per_perm| {
            let avg_loss = per_perm.iter().sum::<f64>() / per_perm.len() as f64;
            MutantScore {
                parent: parent.clone(),
                mutations: Mutation::diff(parent, seq).expect("same length"),
                sequence: seq.clone(),
                per_perm_losses: per_perm,
                avg_loss,
                source: SearchSource::Exhaustive,
            }
        })
    });
    let scored: Vec<MutantScore> = scored.into_iter().collect::<Result<_, _>>()?;
    Ok(rank_mutants(scored, top_m, exclusions))
}

/// Ranks scored mutants ascending by average loss (ties: fewer mutations,
/// then lexicographic sequence), drops exclusions, and keeps the top `top_m`.
/// Excluded mutants in the consumed ranking prefix are reported with their
/// rank.
pub fn rank_mutants(
    mut scored: Vec<MutantScore>,
    top_m: usize,
    exclusions: &BTreeSet<Cdr3Seq>,
) -> SearchOutcome {
    scored.sort_by(|a, b| {
        a.avg_loss
            .total_cmp(&b.avg_loss)
            .then(a.mutations.len().cmp(&b.mutations.len()))
            .then(a.sequence.cmp(&b.sequence))
    });
    let mut out = SearchOutcome::default();
    for (i, score) in scored.into_iter().enumerate() {
        if out.kept.len() == top_m {
            break;
        }
        let excluded = exclusions.contains(&score.sequence);
        if !excluded {
            out.kept.push(score.clone());
        }
        out.rows.push(RankedMutant { rank: i + 1, score, excluded });
    }
    out
}
