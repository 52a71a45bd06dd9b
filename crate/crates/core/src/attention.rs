//! C2: share of last-layer attention that lands on domain-keyword positions.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::trace::ConditionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeywordShare {
    pub share: f64,
    /// The instance had no keyword match; `share` is then defined as 0.
    pub missing: bool,
}

/// Query position of an attention view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionQuery {
    PromptLast,
    FirstGen,
}

impl AttentionQuery {
    pub const ALL: [AttentionQuery; 2] = [AttentionQuery::PromptLast, AttentionQuery::FirstGen];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionQuery::PromptLast => "prompt_last",
            AttentionQuery::FirstGen => "first_gen",
        }
    }
}

/// Renormalizes `row` over visible positions and sums the mass on
/// `keywords`.
pub fn renormalized_keyword_share<T: Copy + Into<f64>>(
    row: &[T],
    visible: &[bool],
    keywords: &[u32],
) -> Result<KeywordShare, MetricError> {
    if row.len() != visible.len() {
        return Err(MetricError::LengthMismatch {
            expected: visible.len(),
            actual: row.len(),
        });
    }
    if keywords.is_empty() {
        return Ok(KeywordShare {
            share: 0.0,
            missing: true,
        });
    }
    if let Some(&k) = keywords
        .iter()
        .find(|&&k| !visible.get(k as usize).copied().unwrap_or(false))
    {
        return Err(MetricError::KeywordNotVisible(k));
    }
    let mass: f64 = row
        .iter()
        .zip(visible)
        .filter(|(_, &v)| v)
        .map(|(&w, _)| w.into())
        .sum();
    if mass <= 0.0 {
        return Err(MetricError::NoVisibleMass);
    }
    let on_keywords: f64 = keywords.iter().map(|&k| row[k as usize].into()).sum();
    Ok(KeywordShare {
        share: (on_keywords / mass).clamp(0.0, 1.0),
        missing: false,
    })
}

/// Uniform mean over heads, position by position.
pub fn head_mean(trace: &ConditionTrace, query: AttentionQuery) -> Result<Vec<f64>, MetricError> {
    let view = match query {
        AttentionQuery::PromptLast => &trace.attention_prompt_last,
        AttentionQuery::FirstGen => &trace.attention_first_gen,
    };
    if view.heads == 0 || view.weights.len() != view.heads * view.positions {
        return Err(MetricError::LengthMismatch {
            expected: view.heads * view.positions,
            actual: view.weights.len(),
        });
    }
    let mut acc = alloc::vec![0.0f64; view.positions];
    for row in view.rows() {
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += f64::from(w);
        }
    }
    let h = view.heads as f64;
    acc.iter_mut().for_each(|a| *a /= h);
    Ok(acc)
}

/// Keyword share for one query view of a condition trace.
pub fn c2_for_view(
    trace: &ConditionTrace,
    query: AttentionQuery,
) -> Result<KeywordShare, MetricError> {
    let row = head_mean(trace, query)?;
    renormalized_keyword_share(&row, &trace.visible_mask, &trace.keyword_positions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Row {
    pub share_prompt_last: f64,
    pub share_first_gen: f64,
    pub missing_keywords: bool,
}

pub fn c2_row(trace: &ConditionTrace) -> Result<C2Row, MetricError> {
    let pl = c2_for_view(trace, AttentionQuery::PromptLast)?;
    let fg = c2_for_view(trace, AttentionQuery::FirstGen)?;
    Ok(C2Row {
        share_prompt_last: pl.share,
        share_first_gen: fg.share,
        missing_keywords: pl.missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::ConditionId;
    use crate::trace::{AttentionView, HiddenSlab};
    use alloc::vec;

    #[test]
    fn renormalizes_over_visible_positions() {
        let s =
            renormalized_keyword_share(&[0.2f64, 0.3, 0.5], &[true, true, false], &[1]).unwrap();
        assert!((s.share - 0.6).abs() < 1e-12);
        assert!(!s.missing);
    }

    #[test]
    fn empty_keywords_are_missing() {
        let s = renormalized_keyword_share(&[0.2f64, 0.3], &[true, true], &[]).unwrap();
        assert_eq!((s.share, s.missing), (0.0, true));
    }

    #[test]
    fn all_visible_keywords_get_full_mass() {
        let s =
            renormalized_keyword_share(&[0.1f64, 0.3, 0.2], &[true, false, true], &[0, 2]).unwrap();
        assert!((s.share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            renormalized_keyword_share(&[0.0f64, 0.3], &[true, false], &[0]),
            Err(MetricError::NoVisibleMass)
        );
        assert_eq!(
            renormalized_keyword_share(&[0.5f64, 0.3], &[true, false], &[1]),
            Err(MetricError::KeywordNotVisible(1))
        );
        assert!(renormalized_keyword_share(&[0.5f64], &[true, false], &[0]).is_err());
    }

    fn trace(rows: &[[f32; 3]], keywords: Vec<u32>) -> ConditionTrace {
        ConditionTrace {
            condition: ConditionId::Control,
            prompt_token_count: 3,
            hidden: HiddenSlab::default(),
            attention_prompt_last: AttentionView {
                heads: rows.len(),
                positions: 3,
                weights: rows.concat(),
            },
            attention_first_gen: AttentionView {
                heads: 1,
                positions: 3,
                weights: vec![0.2, 0.2, 0.6],
            },
            visible_mask: vec![false, true, true],
            keyword_positions: keywords,
            generations: vec![],
            option_scores: None,
        }
    }

    #[test]
    fn single_head_view_matches_direct_share() {
        let t = trace(&[[0.1, 0.3, 0.6]], vec![2]);
        let direct =
            renormalized_keyword_share(&[0.1f32, 0.3, 0.6], &t.visible_mask, &[2]).unwrap();
        assert_eq!(c2_for_view(&t, AttentionQuery::PromptLast).unwrap(), direct);
    }

    #[test]
    fn two_heads_are_averaged_first() {
        // mean row (0.2, 0.35, 0.45); visible mass 0.8; keyword mass 0.45
        let t = trace(&[[0.1, 0.3, 0.6], [0.3, 0.4, 0.3]], vec![2]);
        let s = c2_for_view(&t, AttentionQuery::PromptLast).unwrap();
        assert!((s.share - 0.5625).abs() < 1e-6);
    }

    #[test]
    fn missing_keywords_flag_both_views() {
        let t = trace(&[[0.1, 0.3, 0.6]], vec![]);
        let row = c2_row(&t).unwrap();
        assert!(row.missing_keywords);
        assert_eq!((row.share_prompt_last, row.share_first_gen), (0.0, 0.0));
    }
}
