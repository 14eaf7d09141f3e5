use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

/// Number of boundary classes, `|L|`.
pub const NUM_LABELS: usize = 5;

/// Strength of the boundary that follows a token.
///
/// The derive order gives the total order `Cc < Lw < Pw < Pph < Iph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum BoundaryLabel {
    /// Character boundary: no break, the token continues its lexicon word.
    #[default]
    Cc = 0,
    /// Lexicon word.
    Lw = 1,
    /// Prosodic word.
    Pw = 2,
    /// Prosodic phrase.
    Pph = 3,
    /// Intonational phrase.
    Iph = 4,
}

impl BoundaryLabel {
    pub const ALL: [BoundaryLabel; NUM_LABELS] = [
        BoundaryLabel::Cc,
        BoundaryLabel::Lw,
        BoundaryLabel::Pw,
        BoundaryLabel::Pph,
        BoundaryLabel::Iph,
    ];

    /// The four levels that appear in evaluation reports (CC is bookkeeping only).
    pub const REPORTED: [BoundaryLabel; 4] = [
        BoundaryLabel::Lw,
        BoundaryLabel::Pw,
        BoundaryLabel::Pph,
        BoundaryLabel::Iph,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(CoreError::InvalidLabel(index as i64))
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryLabel::Cc => "CC",
            BoundaryLabel::Lw => "LW",
            BoundaryLabel::Pw => "PW",
            BoundaryLabel::Pph => "PPH",
            BoundaryLabel::Iph => "IPH",
        }
    }
}

impl TryFrom<i64> for BoundaryLabel {
    type Error = CoreError;

    fn try_from(value: i64) -> Result<Self> {
        if (0..NUM_LABELS as i64).contains(&value) {
            Self::from_index(value as usize)
        } else {
            Err(CoreError::InvalidLabel(value))
        }
    }
}

impl fmt::Display for BoundaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for BoundaryLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for BoundaryLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = i64::deserialize(deserializer)?;
        BoundaryLabel::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// Checks that a label sequence is non-empty and ends in an intonational phrase boundary.
pub fn check_terminal(labels: &[BoundaryLabel]) -> Result<()> {
    match labels.last() {
        None => Err(CoreError::InvalidLabelSequence("empty label sequence".into())),
        Some(BoundaryLabel::Iph) => Ok(()),
        Some(other) => Err(CoreError::InvalidLabelSequence(format!(
            "last label is {other}, expected IPH"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_order_and_size() {
        assert_eq!(BoundaryLabel::ALL.len(), NUM_LABELS);
        for pair in BoundaryLabel::ALL.windows(2) {
            assert!(pair[0] < pair[1]);
        }
    }

    #[test]
    fn integer_round_trip() {
        for label in BoundaryLabel::ALL {
            assert_eq!(BoundaryLabel::try_from(label as i64).unwrap(), label);
        }
        assert!(BoundaryLabel::try_from(5).is_err());
        assert!(BoundaryLabel::try_from(-1).is_err());
    }

    #[test]
    fn serde_as_integer() {
        let json = serde_json::to_string(&[BoundaryLabel::Cc, BoundaryLabel::Iph]).unwrap();
        assert_eq!(json, "[0,4]");
        let back: Vec<BoundaryLabel> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![BoundaryLabel::Cc, BoundaryLabel::Iph]);
        assert!(serde_json::from_str::<Vec<BoundaryLabel>>("[7]").is_err());
    }

    #[test]
    fn terminal_check() {
        assert!(check_terminal(&[BoundaryLabel::Cc, BoundaryLabel::Iph]).is_ok());
        assert!(check_terminal(&[BoundaryLabel::Cc, BoundaryLabel::Lw]).is_err());
        assert!(check_terminal(&[]).is_err());
    }
}
