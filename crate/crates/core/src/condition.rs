//! The five prefix-condition arms.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// One intervention arm. The declaration order is the canonical on-disk order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    Control,
    TagCorrect,
    TagWrong,
    TagPlacebo,
    InstrExpert,
}

impl ConditionId {
    pub const ALL: [ConditionId; 5] = [
        ConditionId::Control,
        ConditionId::TagCorrect,
        ConditionId::TagWrong,
        ConditionId::TagPlacebo,
        ConditionId::InstrExpert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionId::Control => "control",
            ConditionId::TagCorrect => "tag_correct",
            ConditionId::TagWrong => "tag_wrong",
            ConditionId::TagPlacebo => "tag_placebo",
            ConditionId::InstrExpert => "instr_expert",
        }
    }

    /// Short label used in report column headers ("Tag", "Instr", ...).
    pub fn short_label(self) -> &'static str {
        match self {
            ConditionId::Control => "Ctrl",
            ConditionId::TagCorrect => "Tag",
            ConditionId::TagWrong => "Wrong",
            ConditionId::TagPlacebo => "Placebo",
            ConditionId::InstrExpert => "Instr",
        }
    }

    /// Single-byte code used by the binary chunk format.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_tag(self) -> bool {
        matches!(
            self,
            ConditionId::TagCorrect | ConditionId::TagWrong | ConditionId::TagPlacebo
        )
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown condition `{0}`")]
pub struct UnknownCondition(pub alloc::string::String);

impl FromStr for ConditionId {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCondition(s.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_canonical_order() {
        for (i, c) in ConditionId::ALL.iter().enumerate() {
            assert_eq!(c.code() as usize, i);
            assert_eq!(ConditionId::from_code(i as u8), Some(*c));
            assert_eq!(c.as_str().parse::<ConditionId>().unwrap(), *c);
        }
        assert!(ConditionId::from_code(5).is_none());
        assert!("expert".parse::<ConditionId>().is_err());
    }
}
