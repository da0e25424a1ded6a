//! Amino-acid sequences, tokenization and prompt encoding.
//!
//! Candidate sequences are CDR3 loops over the 20 canonical residues.
//! A prompt encodes a list of context CDR3s followed by one completion:
//!
//! ```text
//! BOS c1 SEP c2 SEP .. ck SEP completion EOS
//! ```
//!
//! with a loss mask that is true exactly on the completion tokens and the
//! terminal EOS, so the model is scored (and trained) on the completion only.
//! The EOS lies inside the mask so the model can learn completion length.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// The 20 canonical amino-acid single-letter codes, in alphabetical order.
pub const ALPHABET: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// Maximum CDR3 length accepted at parse time.
pub const MAX_CDR3_LEN: usize = 64;

/// One canonical amino acid, stored as its index into [`ALPHABET`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Residue(u8);

impl Residue {
    pub const COUNT: usize = 20;

    pub fn from_char(c: char) -> Option<Self> {
        let b = c as u32;
        if b > 0x7f {
            return None;
        }
        ALPHABET
            .iter()
            .position(|&a| a == b as u8)
            .map(|i| Residue(i as u8))
    }

    pub fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then_some(Residue(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn letter(self) -> char {
        ALPHABET[self.0 as usize] as char
    }

    /// All residues in alphabetical order.
    pub fn all() -> impl Iterator<Item = Residue> {
        (0..Self::COUNT).map(|i| Residue(i as u8))
    }
}

impl fmt::Display for Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeqError {
    Empty,
    TooLong { len: usize, max: usize },
    InvalidResidue { position: usize, found: char },
    /// A token id that does not name a residue showed up where one was
    /// expected (detokenization only).
    NotAResidueToken { token_id: usize },
}

impl fmt::Display for SeqError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqError::Empty => write!(f, "sequence is empty"),
            SeqError::TooLong { len, max } => {
                write!(f, "sequence length {len} exceeds maximum {max}")
            }
            SeqError::InvalidResidue { position, found } => {
                write!(f, "invalid residue {found:?} at position {position}")
            }
            SeqError::NotAResidueToken { token_id } => {
                write!(f, "token id {token_id} is not a residue token")
            }
        }
    }
}

impl core::error::Error for SeqError {}

/// A CDR3 amino-acid sequence; non-empty, at most [`MAX_CDR3_LEN`] residues.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cdr3Seq {
    residues: Vec<Residue>,
}

impl Cdr3Seq {
    pub fn new(residues: Vec<Residue>) -> Result<Self, SeqError> {
        if residues.is_empty() {
            return Err(SeqError::Empty);
        }
        if residues.len() > MAX_CDR3_LEN {
            return Err(SeqError::TooLong {
                len: residues.len(),
                max: MAX_CDR3_LEN,
            });
        }
        Ok(Cdr3Seq { residues })
    }

    /// Parses an upper-case ASCII residue string such as `"ACDEF"`.
    pub fn parse(s: &str) -> Result<Self, SeqError> {
        let mut residues = Vec::with_capacity(s.len());
        for (position, c) in s.chars().enumerate() {
            match Residue::from_char(c) {
                Some(r) => residues.push(r),
                None => return Err(SeqError::InvalidResidue { position, found: c }),
            }
        }
        Cdr3Seq::new(residues)
    }

    pub fn residues(&self) -> &[Residue] {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    pub fn get(&self, i: usize) -> Option<Residue> {
        self.residues.get(i).copied()
    }

    /// Number of positions at which `self` and `other` differ; `None` if the
    /// lengths differ.
    pub fn hamming(&self, other: &Cdr3Seq) -> Option<usize> {
        (self.len() == other.len()).then(|| {
            self.residues
                .iter()
                .zip(&other.residues)
                .filter(|(a, b)| a != b)
                .count()
        })
    }
}

impl fmt::Display for Cdr3Seq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.residues {
            write!(f, "{}", r.letter())?;
        }
        Ok(())
    }
}

impl core::str::FromStr for Cdr3Seq {
    type Err = SeqError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cdr3Seq::parse(s)
    }
}

/// Token inventory: 4 special tokens then one token per residue, 24 total.
/// Ids are dense and stable; PAD is 0 and exists only for batch alignment
/// (encodings produced here never contain it).
pub struct Vocab;

impl Vocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const SEP: usize = 3;
    const RESIDUE_BASE: usize = 4;
    pub const SIZE: usize = Self::RESIDUE_BASE + Residue::COUNT;

    pub fn residue_token(r: Residue) -> usize {
        Self::RESIDUE_BASE + r.index()
    }

    pub fn token_residue(id: usize) -> Option<Residue> {
        id.checked_sub(Self::RESIDUE_BASE).and_then(Residue::from_index)
    }

    pub fn is_residue(id: usize) -> bool {
        Self::token_residue(id).is_some()
    }

    /// Display name of a token id, for debugging and checkpoint dumps.
    pub fn token_name(id: usize) -> Option<String> {
        use alloc::string::ToString;
        match id {
            Self::PAD => Some("<pad>".to_string()),
            Self::BOS => Some("<bos>".to_string()),
            Self::EOS => Some("<eos>".to_string()),
            Self::SEP => Some("<sep>".to_string()),
            _ => Self::token_residue(id).map(|r| r.letter().to_string()),
        }
    }
}

/// One token per residue; no special tokens.
pub fn tokenize(seq: &Cdr3Seq) -> Vec<usize> {
    seq.residues().iter().map(|&r| Vocab::residue_token(r)).collect()
}

/// Inverse of [`tokenize`]; fails on any non-residue token.
pub fn detokenize(ids: &[usize]) -> Result<Cdr3Seq, SeqError> {
    let mut residues = Vec::with_capacity(ids.len());
    for &id in ids {
        match Vocab::token_residue(id) {
            Some(r) => residues.push(r),
            None => return Err(SeqError::NotAResidueToken { token_id: id }),
        }
    }
    Cdr3Seq::new(residues)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodeError {
    EmptyContext,
    OverLength { needed: usize, max: usize },
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeError::EmptyContext => write!(f, "context list is empty"),
            EncodeError::OverLength { needed, max } => {
                write!(f, "encoding needs {needed} tokens but the model maximum is {max}")
            }
        }
    }
}

impl core::error::Error for EncodeError {}

/// A tokenized (context, completion) pair with its loss mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEncoding {
    token_ids: Vec<usize>,
    completion_mask: Vec<bool>,
    context: Vec<Cdr3Seq>,
    completion: Cdr3Seq,
}

impl PromptEncoding {
    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn completion_mask(&self) -> &[bool] {
        &self.completion_mask
    }

    pub fn context(&self) -> &[Cdr3Seq] {
        &self.context
    }

    pub fn completion(&self) -> &Cdr3Seq {
        &self.completion
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of masked (scored) positions: completion length + 1 for EOS.
    pub fn mask_count(&self) -> usize {
        self.completion.len() + 1
    }

    /// Index of the first masked position.
    pub fn completion_start(&self) -> usize {
        self.token_ids.len() - self.mask_count()
    }

    /// Rebuilds the completion from the masked span (minus EOS).
    pub fn decode_completion(&self) -> Result<Cdr3Seq, SeqError> {
        let span: Vec<usize> = self
            .token_ids
            .iter()
            .zip(&self.completion_mask)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect();
        detokenize(&span[..span.len() - 1])
    }
}

/// Encodes `BOS c1 SEP .. ck SEP completion EOS` with the mask true on the
/// completion tokens and EOS. Context order is preserved as given.
pub fn encode_pair(
    context: &[Cdr3Seq],
    completion: &Cdr3Seq,
    max_len: usize,
) -> Result<PromptEncoding, EncodeError> {
    if context.is_empty() {
        return Err(EncodeError::EmptyContext);
    }
    let needed = 2 + context.iter().map(|c| c.len() + 1).sum::<usize>() + completion.len();
    if needed > max_len {
        return Err(EncodeError::OverLength { needed, max: max_len });
    }
    let mut token_ids = Vec::with_capacity(needed);
    token_ids.push(Vocab::BOS);
    for c in context {
        token_ids.extend(tokenize(c));
        token_ids.push(Vocab::SEP);
    }
    let completion_start = token_ids.len();
    token_ids.extend(tokenize(completion));
    token_ids.push(Vocab::EOS);
    let mut completion_mask = alloc::vec![false; token_ids.len()];
    for m in &mut completion_mask[completion_start..] {
        *m = true;
    }
    Ok(PromptEncoding {
        token_ids,
        completion_mask,
        context: context.to_vec(),
        completion: completion.clone(),
    })
}

/// Encodes a bare sequence as `BOS seq EOS` with everything after BOS masked;
/// the pretraining encoding (no context).
pub fn encode_sequence(seq: &Cdr3Seq, max_len: usize) -> Result<PromptEncoding, EncodeError> {
    let needed = 2 + seq.len();
    if needed > max_len {
        return Err(EncodeError::OverLength { needed, max: max_len });
    }
    let mut token_ids = Vec::with_capacity(needed);
    token_ids.push(Vocab::BOS);
    token_ids.extend(tokenize(seq));
    token_ids.push(Vocab::EOS);
    let mut completion_mask = alloc::vec![true; token_ids.len()];
    completion_mask[0] = false;
    Ok(PromptEncoding {
        token_ids,
        completion_mask,
        context: Vec::new(),
        completion: seq.clone(),
    })
}

/// A point substitution: `position` is a 0-based index into the parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mutation {
    pub position: usize,
    pub replacement: Residue,
}

impl Mutation {
    /// Lists the substitutions turning `parent` into `variant`.
    /// `None` if the lengths differ.
    pub fn diff(parent: &Cdr3Seq, variant: &Cdr3Seq) -> Option<Vec<Mutation>> {
        if parent.len() != variant.len() {
            return None;
        }
        Some(
            parent
                .residues()
                .iter()
                .zip(variant.residues())
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .map(|(position, (_, &b))| Mutation { position, replacement: b })
                .collect(),
        )
    }

    /// Conventional label, e.g. `D5G` for aspartate at 1-based position 5
    /// replaced by glycine.
    pub fn label(&self, parent: &Cdr3Seq) -> String {
        use alloc::format;
        let wt = parent.get(self.position).map(|r| r.letter()).unwrap_or('?');
        format!("{}{}{}", wt, self.position + 1, self.replacement.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MutationError {
    OutOfRange { position: usize, len: usize },
    DuplicatePosition { position: usize },
    IdentitySubstitution { position: usize },
}

impl fmt::Display for MutationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationError::OutOfRange { position, len } => {
                write!(f, "mutation position {position} out of range for length {len}")
            }
            MutationError::DuplicatePosition { position } => {
                write!(f, "duplicate mutation position {position}")
            }
            MutationError::IdentitySubstitution { position } => {
                write!(f, "substitution at position {position} equals the parent residue")
            }
        }
    }
}

impl core::error::Error for MutationError {}

/// Applies substitutions to a parent. Positions must be in range and pairwise
/// distinct, and each replacement must differ from the parent residue.
pub fn apply_mutations(parent: &Cdr3Seq, muts: &[Mutation]) -> Result<Cdr3Seq, MutationError> {
    let mut residues = parent.residues().to_vec();
    let mut seen = alloc::vec![false; residues.len()];
    for m in muts {
        if m.position >= residues.len() {
            return Err(MutationError::OutOfRange {
                position: m.position,
                len: residues.len(),
            });
        }
        if seen[m.position] {
            return Err(MutationError::DuplicatePosition { position: m.position });
        }
        seen[m.position] = true;
        if residues[m.position] == m.replacement {
            return Err(MutationError::IdentitySubstitution { position: m.position });
        }
        residues[m.position] = m.replacement;
    }
    Cdr3Seq::new(residues).map_err(|_| unreachable!("length unchanged"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> Cdr3Seq {
        Cdr3Seq::parse(s).unwrap()
    }

    #[test]
    fn vocab_layout() {
        assert_eq!(Vocab::SIZE, 24);
        assert_eq!(Vocab::PAD, 0);
        // Dense, 0-based ids: every id below SIZE has a name.
        for id in 0..Vocab::SIZE {
            assert!(Vocab::token_name(id).is_some());
        }
        assert!(Vocab::token_name(Vocab::SIZE).is_none());
    }

    #[test]
    fn residue_token_round_trip() {
        for r in Residue::all() {
            assert_eq!(Vocab::token_residue(Vocab::residue_token(r)), Some(r));
        }
        for id in [Vocab::PAD, Vocab::BOS, Vocab::EOS, Vocab::SEP] {
            assert_eq!(Vocab::token_residue(id), None);
        }
    }

    #[test]
    fn tokenize_acd() {
        let ids = tokenize(&seq("ACD"));
        let expect: Vec<usize> = ["A", "C", "D"]
            .iter()
            .map(|s| Vocab::residue_token(Residue::from_char(s.chars().next().unwrap()).unwrap()))
            .collect();
        assert_eq!(ids, expect);
    }

    #[test]
    fn parse_rejects_non_canonical() {
        // X, B, Z are ambiguity codes and must be rejected.
        for bad in ["ACX", "B", "AZA", "ac"] {
            assert!(matches!(
                Cdr3Seq::parse(bad),
                Err(SeqError::InvalidResidue { .. })
            ));
        }
        assert_eq!(Cdr3Seq::parse(""), Err(SeqError::Empty));
    }

    #[test]
    fn parse_rejects_over_length() {
        let long: String = core::iter::repeat('A').take(MAX_CDR3_LEN + 1).collect();
        assert!(matches!(Cdr3Seq::parse(&long), Err(SeqError::TooLong { .. })));
    }

    #[test]
    fn encode_pair_layout_and_mask() {
        let enc = encode_pair(&[seq("AC"), seq("DE")], &seq("FG"), 128).unwrap();
        let r = |s: &str| Vocab::residue_token(Residue::from_char(s.chars().next().unwrap()).unwrap());
        assert_eq!(
            enc.token_ids(),
            &[
                Vocab::BOS,
                r("A"),
                r("C"),
                Vocab::SEP,
                r("D"),
                r("E"),
                Vocab::SEP,
                r("F"),
                r("G"),
                Vocab::EOS
            ]
        );
        assert_eq!(
            enc.completion_mask(),
            &[false, false, false, false, false, false, false, true, true, true]
        );
        assert_eq!(enc.mask_count(), 3);
        assert_eq!(enc.completion_start(), 7);
        assert_eq!(enc.decode_completion().unwrap(), seq("FG"));
    }

    #[test]
    fn encode_pair_length_formula() {
        // k=5 contexts of length 10 and a completion of length 10:
        // 5*10 + 10 + 5 SEPs + BOS + EOS = 67.
        let ctx: Vec<Cdr3Seq> = (0..5).map(|_| seq("ACDEFGHIKL")).collect();
        let enc = encode_pair(&ctx, &seq("MNPQRSTVWY"), 128).unwrap();
        assert_eq!(enc.len(), 67);
    }

    #[test]
    fn encode_pair_errors() {
        assert_eq!(
            encode_pair(&[], &seq("AC"), 128),
            Err(EncodeError::EmptyContext)
        );
        assert_eq!(
            encode_pair(&[seq("ACDEF")], &seq("ACDEF"), 10),
            Err(EncodeError::OverLength { needed: 13, max: 10 })
        );
    }

    #[test]
    fn encodings_never_contain_pad() {
        let enc = encode_pair(&[seq("ACD")], &seq("WY"), 128).unwrap();
        assert!(enc.token_ids().iter().all(|&id| id != Vocab::PAD));
        let enc = encode_sequence(&seq("ACD"), 128).unwrap();
        assert!(enc.token_ids().iter().all(|&id| id != Vocab::PAD));
    }

    #[test]
    fn encode_sequence_masks_everything_after_bos() {
        let enc = encode_sequence(&seq("ACD"), 16).unwrap();
        assert_eq!(enc.token_ids().len(), 5);
        assert_eq!(enc.completion_mask(), &[false, true, true, true, true]);
        assert_eq!(enc.decode_completion().unwrap(), seq("ACD"));
    }

    #[test]
    fn apply_single_and_double_mutations() {
        let parent = seq("ACDEF");
        let g = Residue::from_char('G').unwrap();
        let c = Residue::from_char('C').unwrap();
        let a = Residue::from_char('A').unwrap();
        let got = apply_mutations(&parent, &[Mutation { position: 1, replacement: g }]).unwrap();
        assert_eq!(got, seq("AGDEF"));
        let got = apply_mutations(
            &parent,
            &[
                Mutation { position: 0, replacement: c },
                Mutation { position: 4, replacement: a },
            ],
        )
        .unwrap();
        assert_eq!(got, seq("CCDEA"));
    }

    #[test]
    fn mutation_errors() {
        let parent = seq("ACDEF");
        let c = Residue::from_char('C').unwrap();
        let g = Residue::from_char('G').unwrap();
        assert_eq!(
            apply_mutations(&parent, &[Mutation { position: 1, replacement: c }]),
            Err(MutationError::IdentitySubstitution { position: 1 })
        );
        assert_eq!(
            apply_mutations(&parent, &[Mutation { position: 9, replacement: g }]),
            Err(MutationError::OutOfRange { position: 9, len: 5 })
        );
        assert_eq!(
            apply_mutations(
                &parent,
                &[
                    Mutation { position: 2, replacement: g },
                    Mutation { position: 2, replacement: c },
                ]
            ),
            Err(MutationError::DuplicatePosition { position: 2 })
        );
    }

    #[test]
    fn zero_mutations_is_identity() {
        let parent = seq("ACDEF");
        assert_eq!(apply_mutations(&parent, &[]).unwrap(), parent);
    }

    #[test]
    fn mutation_label_is_one_based() {
        let parent = seq("ACDEF");
        let g = Residue::from_char('G').unwrap();
        let m = Mutation { position: 2, replacement: g };
        assert_eq!(m.label(&parent), "D3G");
    }

    fn arb_seq(max_len: usize) -> impl Strategy<Value = Cdr3Seq> {
        prop::collection::vec(0usize..Residue::COUNT, 1..=max_len).prop_map(|idx| {
            Cdr3Seq::new(idx.into_iter().map(|i| Residue::from_index(i).unwrap()).collect())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn tokenize_round_trip(s in arb_seq(MAX_CDR3_LEN)) {
            prop_assert_eq!(detokenize(&tokenize(&s)).unwrap(), s);
        }

        #[test]
        fn encode_pair_injective(
            a in prop::collection::vec(arb_seq(8), 1..4),
            ca in arb_seq(8),
            b in prop::collection::vec(arb_seq(8), 1..4),
            cb in arb_seq(8),
        ) {
            let ea = encode_pair(&a, &ca, 256).unwrap();
            let eb = encode_pair(&b, &cb, 256).unwrap();
            if (a.clone(), ca.clone()) != (b.clone(), cb.clone()) {
                prop_assert_ne!(ea.token_ids(), eb.token_ids());
            } else {
                prop_assert_eq!(ea.token_ids(), eb.token_ids());
            }
        }

        #[test]
        fn mutation_hamming_distance(s in arb_seq(16), picks in prop::collection::vec((0usize..16, 0usize..20), 0..3)) {
            // Build a valid mutation set: distinct in-range positions, non-identity replacements.
            let mut muts: Vec<Mutation> = Vec::new();
            for (p, r) in picks {
                let position = p % s.len();
                if muts.iter().any(|m| m.position == position) {
                    continue;
                }
                let incumbent = s.get(position).unwrap();
                let replacement = Residue::from_index(r % 20).unwrap();
                if replacement != incumbent {
                    muts.push(Mutation { position, replacement });
                }
            }
            let mutated = apply_mutations(&s, &muts).unwrap();
            prop_assert_eq!(mutated.hamming(&s), Some(muts.len()));
            prop_assert_eq!(mutated.len(), s.len());
        }

        #[test]
        fn decode_completion_round_trips(ctx in prop::collection::vec(arb_seq(12), 1..6), c in arb_seq(12)) {
            let enc = encode_pair(&ctx, &c, 256).unwrap();
            prop_assert_eq!(enc.decode_completion().unwrap(), c);
            // Mask is one contiguous suffix ending at EOS.
            let first = enc.completion_mask().iter().position(|&m| m).unwrap();
            prop_assert!(enc.completion_mask()[first..].iter().all(|&m| m));
            prop_assert_eq!(first, enc.completion_start());
        }
    }
}
