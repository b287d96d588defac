//! Dempster-Shafer algebra over small frames of discernment.
//!
//! General mass functions are stored sparsely as a map from focal sets to
//! masses, with subsets encoded as bit sets over the ordered frame. The
//! contour-level shortcuts in [`contour`] are what the learning pipeline
//! uses; the general algebra in [`mass`] exists for exactness checks and
//! for small-frame reasoning.

pub mod contour;
pub mod mass;
pub mod text;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use contour::{ContourFunction, ReliabilityVector, SimpleMassFunction};
pub use mass::{MassFunction, MassViolation};

/// Largest frame supported by the powerset-indexed general algebra.
pub const MAX_GENERAL_K: usize = 16;

/// Combined masses with conflict at or above `1 - TOTAL_CONFLICT_EPS` are
/// treated as non-combinable.
pub const TOTAL_CONFLICT_EPS: f64 = 1e-12;

/// Ordered, named set of mutually exclusive classes.
///
/// Cloning is cheap; the label list is shared.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    labels: Arc<[String]>,
}

impl Frame {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidFrame(format!(
                "need at least 2 classes, got {}",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(|c| c.is_whitespace() || c == ',') {
                return Err(Error::InvalidFrame(format!(
                    "label {l:?} must be nonempty without whitespace or commas"
                )));
            }
            if labels[..i].contains(l) {
                return Err(Error::InvalidFrame(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels: labels.into() })
    }

    /// Frame with labels `c1..cK`.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| format!("c{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn full(&self) -> Subset {
        Subset::full(self.len())
    }

    pub(crate) fn ensure_same(&self, other: &Frame) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::FrameMismatch {
                left: self.labels.to_vec(),
                right: other.labels.to_vec(),
            })
        }
    }

    pub(crate) fn ensure_general(&self) -> Result<()> {
        if self.len() > MAX_GENERAL_K {
            Err(Error::FrameTooLarge { k: self.len(), max: MAX_GENERAL_K })
        } else {
            Ok(())
        }
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.labels.iter()).finish()
    }
}

/// Subset of a frame, bit `k` set when class `k` is a member.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Subset(pub u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn full(k: usize) -> Subset {
        if k >= 32 {
            Subset(u32::MAX)
        } else {
            Subset((1u32 << k) - 1)
        }
    }

    pub fn singleton(k: usize) -> Subset {
        Subset(1 << k)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(idx: I) -> Subset {
        Subset(idx.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 >> k & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn intersect(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    /// Complement relative to a frame of `k` classes.
    pub fn complement(self, k: usize) -> Subset {
        Subset(!self.0 & Subset::full(k).0)
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |i| bits >> i & 1 == 1)
    }

    pub(crate) fn check(self, k: usize) -> Result<Subset> {
        if self.is_subset_of(Subset::full(k)) {
            Ok(self)
        } else {
            Err(Error::SubsetOutOfRange { bits: self.0, k })
        }
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.indices().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}
