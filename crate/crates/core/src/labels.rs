//! The five-point intelligibility label space, the two classification tasks
//! and per-utterance class-score vectors.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use libm::exp;

use crate::{Error, Result};

/// Intelligibility rating; the ordinal code increases with severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum IntelligibilityClass {
    Typical = 0,
    Mild = 1,
    Moderate = 2,
    Severe = 3,
    Profound = 4,
}

impl IntelligibilityClass {
    pub const ALL: [IntelligibilityClass; 5] = [
        IntelligibilityClass::Typical,
        IntelligibilityClass::Mild,
        IntelligibilityClass::Moderate,
        IntelligibilityClass::Severe,
        IntelligibilityClass::Profound,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IntelligibilityClass::Typical => "TYPICAL",
            IntelligibilityClass::Mild => "MILD",
            IntelligibilityClass::Moderate => "MODERATE",
            IntelligibilityClass::Severe => "SEVERE",
            IntelligibilityClass::Profound => "PROFOUND",
        }
    }
}

impl fmt::Display for IntelligibilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown intelligibility label {0:?}")]
pub struct UnknownLabel(pub alloc::string::String);

impl FromStr for IntelligibilityClass {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| UnknownLabel(t.into()))
    }
}

/// Binary MILD+ grouping: typical speech is 0, every other rating is 1.
pub fn binarize_mildplus(label: IntelligibilityClass) -> usize {
    match label {
        IntelligibilityClass::Typical => 0,
        _ => 1,
    }
}

/// Classification task: typical-vs-atypical or the full five-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    MildPlus,
    FiveClass,
}

impl Task {
    pub fn from_n_classes(k: usize) -> Result<Self> {
        match k {
            2 => Ok(Task::MildPlus),
            5 => Ok(Task::FiveClass),
            _ => Err(Error::invalid("task", alloc::format!("must be 2 or 5, got {k}"))),
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::MildPlus => 2,
            Task::FiveClass => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::MildPlus => "2-class",
            Task::FiveClass => "5-class",
        }
    }

    /// Class index of a rating within this task.
    pub fn target(self, label: IntelligibilityClass) -> usize {
        match self {
            Task::MildPlus => binarize_mildplus(label),
            Task::FiveClass => label.code(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Task {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// A probability distribution over the classes of a task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ClassScores {
    probs: Vec<f64>,
}

impl ClassScores {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("class scores"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probs", "entries must lie in [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid("probs", alloc::format!("entries sum to {sum}")));
        }
        Ok(ClassScores { probs })
    }

    /// Numerically stable softmax; `-inf` logits receive probability zero.
    pub fn from_logits(logits: &[f64]) -> Self {
        ClassScores {
            probs: softmax(logits),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest score; ties go to the lowest (least severe) index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Rounds a probability vector to multiples of 2^-52 and moves the rounding
/// residue onto the largest entry. Every partial sum is then exact, so the
/// entries add up to exactly 1 in any order.
pub fn snap_distribution(probs: &mut [f64]) {
    if probs.is_empty() {
        return;
    }
    const GRID: f64 = 1.0 / (1u64 << 52) as f64;
    for p in probs.iter_mut() {
        *p = libm::round(*p / GRID) * GRID;
    }
    let top = argmax(probs);
    probs[top] = 0.0;
    let rest: f64 = probs.iter().sum();
    probs[top] = 1.0 - rest;
}

/// First index holding the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
