//! Label sets, the five ways two of them can relate, and the pair weights
//! derived from those relations.
//!
//! For an anchor labelled `S` and another sample labelled `T`, the weight of
//! the pair factors into a similarity term and a dissimilarity penalty:
//!
//! ```text
//! similarity      = |S ∩ T| / |S|
//! dissimilarity   = penalty(|T| - |S ∩ T|)
//! weight          = similarity * dissimilarity
//! ```
//!
//! The default penalty `1 / (1 + x)` keeps every weight inside `[0, 1]` with
//! the extremes reserved for disjoint (`0`) and identical (`1`) label sets.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// A nonempty set of class indices drawn from a fixed universe `0..universe_size`.
///
/// Backed by a bitset so intersection and difference cardinalities reduce to
/// word operations regardless of set size.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSet {
    words: Vec<u64>,
    universe: usize,
    len: usize,
}

impl LabelSet {
    /// Builds a set from class indices. Duplicates collapse; the set must end
    /// up nonempty and every index must lie below `universe`.
    pub fn from_indices<I>(universe: usize, indices: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        if universe == 0 {
            return Err(Error::InvalidConfig(
                "label universe must contain at least one class".into(),
            ));
        }
        let mut words = vec![0u64; universe.div_ceil(WORD_BITS)];
        let mut len = 0usize;
        for idx in indices {
            if idx >= universe {
                return Err(Error::LabelOutOfRange {
                    label: idx,
                    universe,
                });
            }
            let word = &mut words[idx / WORD_BITS];
            let bit = 1u64 << (idx % WORD_BITS);
            if *word & bit == 0 {
                *word |= bit;
                len += 1;
            }
        }
        if len == 0 {
            return Err(Error::EmptyLabelSet);
        }
        Ok(Self {
            words,
            universe,
            len,
        })
    }

    /// Parses the sorted-list text form, e.g. `[0,1,2]`. Whitespace around
    /// numbers is tolerated; the universe must be supplied by the caller.
    pub fn parse(text: &str, universe: usize) -> Result<Self> {
        let inner = text
            .trim()
            .strip_prefix('[')
            .and_then(|rest| rest.strip_suffix(']'))
            .ok_or_else(|| Error::Parse(format!("label set `{text}` is not bracketed")))?;
        let mut indices = Vec::new();
        for piece in inner.split(',') {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            let idx: usize = piece
                .parse()
                .map_err(|_| Error::Parse(format!("`{piece}` is not a class index")))?;
            indices.push(idx);
        }
        Self::from_indices(universe, indices)
    }

    pub fn universe_size(&self) -> usize {
        self.universe
    }

    /// Cardinality of the set; always at least 1.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Always false: construction rejects empty sets. Provided so generic
    /// code over collections reads naturally.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, idx: usize) -> bool {
        idx < self.universe && self.words[idx / WORD_BITS] & (1u64 << (idx % WORD_BITS)) != 0
    }

    /// Members in ascending order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let tz = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some(w * WORD_BITS + tz)
                }
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.members().collect()
    }

    fn check_universe(&self, other: &Self) -> Result<()> {
        if self.universe != other.universe {
            return Err(Error::UniverseMismatch {
                left: self.universe,
                right: other.universe,
            });
        }
        Ok(())
    }

    /// `|self ∩ other|`.
    pub fn intersection_len(&self, other: &Self) -> Result<usize> {
        self.check_universe(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// True when every member of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        Ok(self.intersection_len(other)? == self.len)
    }

    /// True when the two sets share at least one label.
    pub fn overlaps(&self, other: &Self) -> Result<bool> {
        Ok(self.intersection_len(other)? > 0)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, idx) in self.members().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{idx}")?;
        }
        write!(f, "]")
    }
}

/// The five mutually exclusive ways two nonempty label sets can relate.
///
/// Written from the anchor's point of view: `Relation::of(anchor, sample)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// No shared labels.
    Disjoint,
    /// Identical label sets.
    Equal,
    /// Some shared labels, but neither set contains the other.
    PartialOverlap,
    /// The anchor's labels strictly contain the sample's.
    AnchorSuperset,
    /// The anchor's labels are strictly contained in the sample's.
    AnchorSubset,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Disjoint,
        Relation::Equal,
        Relation::PartialOverlap,
        Relation::AnchorSuperset,
        Relation::AnchorSubset,
    ];

    /// Classifies the pair `(anchor, sample)`. Exactly one variant applies to
    /// any pair of nonempty sets over the same universe.
    pub fn of(anchor: &LabelSet, sample: &LabelSet) -> Result<Relation> {
        let overlap = anchor.intersection_len(sample)?;
        Ok(if overlap == 0 {
            Relation::Disjoint
        } else if overlap == anchor.len() && overlap == sample.len() {
            Relation::Equal
        } else if overlap == sample.len() {
            Relation::AnchorSuperset
        } else if overlap == anchor.len() {
            Relation::AnchorSubset
        } else {
            Relation::PartialOverlap
        })
    }

    /// Short code used in reports and tables.
    pub fn code(&self) -> &'static str {
        match self {
            Relation::Disjoint => "R1",
            Relation::Equal => "R2",
            Relation::PartialOverlap => "R3",
            Relation::AnchorSuperset => "R4",
            Relation::AnchorSubset => "R5",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Relation::Disjoint => "disjoint",
            Relation::Equal => "equal",
            Relation::PartialOverlap => "partial overlap",
            Relation::AnchorSuperset => "anchor superset",
            Relation::AnchorSubset => "anchor subset",
        };
        write!(f, "{name}")
    }
}

/// Penalty applied to the count of labels the sample carries beyond the
/// shared ones. Maps 0 to 1 and decreases from there.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `1 / (1 + x)`: parameter-free, never reaches zero, and keeps weights
    /// rational so they can be checked exactly.
    #[default]
    Reciprocal,
    /// `exp(-alpha * x)`: steeper decay for comparison runs. `alpha` must be
    /// positive.
    ExponentialDecay { alpha: f64 },
}

impl PenaltyKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            PenaltyKind::Reciprocal => Ok(()),
            PenaltyKind::ExponentialDecay { alpha } => {
                if alpha.is_finite() && *alpha > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "exponential decay rate must be positive and finite, got {alpha}"
                    )))
                }
            }
        }
    }

    /// Penalty value for a given excess-label count.
    pub fn apply(&self, excess: usize) -> f64 {
        match self {
            PenaltyKind::Reciprocal => 1.0 / (1.0 + excess as f64),
            PenaltyKind::ExponentialDecay { alpha } => (-alpha * excess as f64).exp(),
        }
    }
}

/// Everything derivable from one (anchor, sample) pair: the relation, the raw
/// cardinalities, and the similarity/dissimilarity factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairFactors {
    pub relation: Relation,
    /// `|S ∩ T|`.
    pub overlap: usize,
    /// `|T| - |S ∩ T|`: labels the sample carries that the anchor shares none of.
    pub excess: usize,
    /// `|S|`.
    pub anchor_len: usize,
    /// `|T|`.
    pub sample_len: usize,
    pub similarity: f64,
    pub dissimilarity: f64,
    /// `similarity * dissimilarity`, exactly as the product of the two fields.
    pub weight: f64,
    penalty: PenaltyKind,
}

/// Exact rational view of the factors, available under the reciprocal penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactFactors {
    pub similarity: Ratio<u64>,
    pub dissimilarity: Ratio<u64>,
    pub weight: Ratio<u64>,
}

impl PairFactors {
    /// Exact rational factors. `None` for penalties that are not rational in
    /// the excess count.
    pub fn exact(&self) -> Option<ExactFactors> {
        match self.penalty {
            PenaltyKind::Reciprocal => {
                let similarity = Ratio::new(self.overlap as u64, self.anchor_len as u64);
                let dissimilarity = Ratio::new(1, 1 + self.excess as u64);
                Some(ExactFactors {
                    similarity,
                    dissimilarity,
                    weight: similarity * dissimilarity,
                })
            }
            PenaltyKind::ExponentialDecay { .. } => None,
        }
    }
}

/// `|S ∩ T| / |S|`: the fraction of the anchor's labels the sample shares.
pub fn similarity_factor(anchor: &LabelSet, sample: &LabelSet) -> Result<f64> {
    let overlap = anchor.intersection_len(sample)?;
    Ok(overlap as f64 / anchor.len() as f64)
}

/// Penalty on the sample's labels outside the shared set.
pub fn dissimilarity_factor(
    anchor: &LabelSet,
    sample: &LabelSet,
    penalty: PenaltyKind,
) -> Result<f64> {
    penalty.validate()?;
    let overlap = anchor.intersection_len(sample)?;
    Ok(penalty.apply(sample.len() - overlap))
}

/// Classifies the pair and computes both factors in one pass.
pub fn pair_factors(
    anchor: &LabelSet,
    sample: &LabelSet,
    penalty: PenaltyKind,
) -> Result<PairFactors> {
    penalty.validate()?;
    let overlap = anchor.intersection_len(sample)?;
    let relation = Relation::of(anchor, sample)?;
    let excess = sample.len() - overlap;
    let similarity = overlap as f64 / anchor.len() as f64;
    let dissimilarity = penalty.apply(excess);
    Ok(PairFactors {
        relation,
        overlap,
        excess,
        anchor_len: anchor.len(),
        sample_len: sample.len(),
        similarity,
        dissimilarity,
        weight: similarity * dissimilarity,
        penalty,
    })
}
