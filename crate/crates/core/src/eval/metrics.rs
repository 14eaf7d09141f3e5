use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::label::{BoundaryLabel, NUM_LABELS};

/// Exact-match counts per boundary level, summed over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [u64; NUM_LABELS],
    pub ref_count: [u64; NUM_LABELS],
    pub hyp_count: [u64; NUM_LABELS],
}

impl ConfusionCounts {
    pub fn from_pair(reference: &[BoundaryLabel], hypothesis: &[BoundaryLabel]) -> Result<Self> {
        let mut counts = Self::default();
        counts.add(reference, hypothesis)?;
        Ok(counts)
    }

    pub fn add(&mut self, reference: &[BoundaryLabel], hypothesis: &[BoundaryLabel]) -> Result<()> {
        if reference.len() != hypothesis.len() {
            return Err(CoreError::LengthMismatch(format!(
                "reference has {} labels, hypothesis {}",
                reference.len(),
                hypothesis.len()
            )));
        }
        for (&r, &h) in reference.iter().zip(hypothesis) {
            self.ref_count[r.index()] += 1;
            self.hyp_count[h.index()] += 1;
            if r == h {
                self.tp[r.index()] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for l in 0..NUM_LABELS {
            self.tp[l] += other.tp[l];
            self.ref_count[l] += other.ref_count[l];
            self.hyp_count[l] += other.hyp_count[l];
        }
    }

    pub fn score(&self, level: BoundaryLabel) -> LevelScore {
        let l = level.index();
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp[l], self.hyp_count[l]);
        let recall = ratio(self.tp[l], self.ref_count[l]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        LevelScore {
            precision,
            recall,
            f1,
            absent: self.ref_count[l] == 0 && self.hyp_count[l] == 0,
        }
    }

    pub fn scores(&self) -> LevelScores {
        LevelScores(BoundaryLabel::REPORTED.map(|level| self.score(level)))
    }

    /// Fraction of tokens whose label matches, over all five classes.
    pub fn accuracy(&self) -> f64 {
        let total: u64 = self.ref_count.iter().sum();
        if total == 0 {
            0.0
        } else {
            self.tp.iter().sum::<u64>() as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Neither reference nor hypothesis contains this level.
    pub absent: bool,
}

/// Scores for LW, PW, PPH, IPH in that order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelScores(pub [LevelScore; 4]);

impl LevelScores {
    pub fn get(&self, level: BoundaryLabel) -> LevelScore {
        let pos = BoundaryLabel::REPORTED
            .iter()
            .position(|&l| l == level)
            .expect("CC is not a reported level");
        self.0[pos]
    }
}

/// Per-level precision, recall and F1 of `hypothesis` against `reference` on exact label equality.
pub fn prf1(reference: &[BoundaryLabel], hypothesis: &[BoundaryLabel]) -> Result<LevelScores> {
    Ok(ConfusionCounts::from_pair(reference, hypothesis)?.scores())
}
