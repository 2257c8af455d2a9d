//! Weakly-hard constraints and loss words.
//!
//! A weakly-hard constraint K(r, s) requires that every window of s
//! consecutive control attempts contains at least r delivered packets.
//! A loss word records delivery outcomes over time (1 = delivered,
//! 0 = lost); its label word is the run-length form with one label per
//! block `1 0^l`, where l counts the losses that follow a delivery.

use crate::error::Error;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Upper bound on the horizon accepted by [`WhConstraint::dominates_bounded`].
pub const DOMINANCE_HORIZON_CAP: u32 = 24;

/// A weakly-hard constraint K(r, s) with 1 <= r <= s.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawConstraint", into = "RawConstraint")]
pub struct WhConstraint {
    r: u32,
    s: u32,
}

#[derive(Serialize, Deserialize)]
struct RawConstraint {
    r: u32,
    s: u32,
}

impl TryFrom<RawConstraint> for WhConstraint {
    type Error = Error;
    fn try_from(raw: RawConstraint) -> Result<Self, Error> {
        WhConstraint::new(raw.r, raw.s)
    }
}

impl From<WhConstraint> for RawConstraint {
    fn from(c: WhConstraint) -> Self {
        RawConstraint { r: c.r, s: c.s }
    }
}

impl WhConstraint {
    pub fn new(r: u32, s: u32) -> Result<Self, Error> {
        if r < 1 || r > s {
            return Err(Error::InvalidConstraint { r, s });
        }
        Ok(WhConstraint { r, s })
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    /// Largest admissible loss run after a delivery, s - r.
    pub fn max_label(&self) -> u32 {
        self.s - self.r
    }

    /// Finite-word satisfaction: every full window of s bits holds at
    /// least r ones, and no suffix of length <= s carries more than
    /// s - r zeros. This is exactly the prefix-extendability test: a
    /// word passes iff it can be continued into an infinite sequence
    /// meeting K(r, s).
    pub fn satisfies(&self, word: &LossWord) -> bool {
        self.satisfies_bits(word.bits())
    }

    pub(crate) fn satisfies_bits(&self, bits: &[bool]) -> bool {
        let len = bits.len();
        let s = self.s as usize;
        let max_z = (self.s - self.r) as usize;
        if len >= s {
            let mut zeros = bits[..s].iter().filter(|&&b| !b).count();
            if zeros > max_z {
                return false;
            }
            for i in s..len {
                if !bits[i - s] {
                    zeros -= 1;
                }
                if !bits[i] {
                    zeros += 1;
                }
                if zeros > max_z {
                    return false;
                }
            }
        }
        let mut zeros = 0usize;
        for t in 1..=len.min(s.saturating_sub(1)) {
            if !bits[len - t] {
                zeros += 1;
                if zeros > max_z {
                    return false;
                }
            }
        }
        true
    }

    /// Splits a satisfying word that starts with a delivery into its
    /// label word.
    pub fn decompose(&self, word: &LossWord) -> Result<LabelWord, Error> {
        let bits = word.bits();
        match bits.first() {
            None => return Ok(LabelWord(Vec::new())),
            Some(false) => return Err(Error::WordStartsWithLoss),
            Some(true) => {}
        }
        if !self.satisfies(word) {
            return Err(Error::WordViolatesConstraint { r: self.r, s: self.s });
        }
        let mut labels = Vec::new();
        let mut run = 0u32;
        for &b in &bits[1..] {
            if b {
                labels.push(run);
                run = 0;
            } else {
                run += 1;
            }
        }
        labels.push(run);
        debug_assert!(labels.iter().all(|&l| l <= self.max_label()));
        Ok(LabelWord(labels))
    }

    /// Bounded dominance: true iff every loss word of length <= horizon
    /// satisfying `self` also satisfies `other`. Enumerating only the
    /// words of length exactly `horizon` that start with a delivery is
    /// complete: satisfaction extends along all-ones padding and a
    /// violation survives any extension.
    pub fn dominates_bounded(&self, other: &WhConstraint, horizon: u32) -> Result<bool, Error> {
        if horizon > DOMINANCE_HORIZON_CAP {
            return Err(Error::HorizonTooLarge { got: horizon, cap: DOMINANCE_HORIZON_CAP });
        }
        let min = self.s.max(other.s);
        if horizon < min {
            return Err(Error::HorizonTooSmall { got: horizon, min });
        }
        let n = horizon as usize;
        let mut bits = vec![false; n];
        bits[0] = true;
        let total: u64 = 1u64 << (n - 1);
        for mask in 0..total {
            for i in 1..n {
                bits[i] = mask >> (i - 1) & 1 == 1;
            }
            if self.satisfies_bits(&bits) && !other.satisfies_bits(&bits) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl fmt::Display for WhConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K({}, {})", self.r, self.s)
    }
}

/// A finite record of delivery outcomes, oldest first.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LossWord(Vec<bool>);

impl LossWord {
    pub fn new(bits: Vec<bool>) -> Self {
        LossWord(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, delivered: bool) {
        self.0.push(delivered);
    }
}

impl fmt::Display for LossWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl FromStr for LossWord {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        let mut bits = Vec::with_capacity(s.len());
        for ch in s.chars() {
            match ch {
                '1' => bits.push(true),
                '0' => bits.push(false),
                ' ' | '_' => {}
                other => {
                    return Err(Error::WordRejected(format!(
                        "unexpected character {other:?}; use 0 and 1"
                    )))
                }
            }
        }
        Ok(LossWord(bits))
    }
}

impl TryFrom<String> for LossWord {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<LossWord> for String {
    fn from(w: LossWord) -> String {
        w.to_string()
    }
}

/// Run-length form of a loss word: one label per block `1 0^l`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct LabelWord(pub Vec<u32>);

impl LabelWord {
    pub fn labels(&self) -> &[u32] {
        &self.0
    }

    /// Expanded binary length, sum of l + 1 over the labels.
    pub fn expanded_len(&self) -> usize {
        self.0.iter().map(|&l| l as usize + 1).sum()
    }

    pub fn expand(&self) -> LossWord {
        let mut bits = Vec::with_capacity(self.expanded_len());
        for &l in &self.0 {
            bits.push(true);
            bits.extend(std::iter::repeat(false).take(l as usize));
        }
        LossWord(bits)
    }
}

impl fmt::Display for LabelWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for l in &self.0 {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{l}")?;
            first = false;
        }
        Ok(())
    }
}
