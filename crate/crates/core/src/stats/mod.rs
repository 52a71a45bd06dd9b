//! Paired-difference statistics: t-test, Wilcoxon signed-rank, Cohen's d,
//! Pearson/Spearman with Fisher intervals, Benjamini–Hochberg FDR.

mod correlation;
mod delta;
mod error;
mod fdr;
mod paired;
pub mod special;

use core::fmt;

use serde::{Deserialize, Serialize};

pub use correlation::{correlation, fisher_ci, pearson, ranks, CorrelationMethod};
pub use delta::{paired_deltas, DeltaTable};
pub use error::StatsError;
pub use fdr::{bh_fdr, BhOutcome};
pub use paired::{cohens_d_paired, mean_sem, paired_t, sample_sd, wilcoxon_signed_rank, MeanSem};

/// Largest `n` for which the Wilcoxon p-value is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    PairedT,
    WilcoxonExact,
    WilcoxonNormal,
    Pearson,
    Spearman,
}

impl TestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::PairedT => "paired_t",
            TestMethod::WilcoxonExact => "wilcoxon_exact",
            TestMethod::WilcoxonNormal => "wilcoxon_normal",
            TestMethod::Pearson => "pearson",
            TestMethod::Spearman => "spearman",
        }
    }
}

/// Stars for p < 0.001 / 0.01 / 0.05 (strict), otherwise `ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignificanceMarker {
    #[serde(rename = "***")]
    P001,
    #[serde(rename = "**")]
    P01,
    #[serde(rename = "*")]
    P05,
    #[serde(rename = "ns")]
    NotSignificant,
}

impl SignificanceMarker {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            SignificanceMarker::P001
        } else if p < 0.01 {
            SignificanceMarker::P01
        } else if p < 0.05 {
            SignificanceMarker::P05
        } else {
            // NaN lands here too
            SignificanceMarker::NotSignificant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignificanceMarker::P001 => "***",
            SignificanceMarker::P01 => "**",
            SignificanceMarker::P05 => "*",
            SignificanceMarker::NotSignificant => "ns",
        }
    }
}

impl fmt::Display for SignificanceMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub statistic: f64,
    pub p_value: f64,
    pub effect_size: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
    pub method: TestMethod,
    pub significance_marker: SignificanceMarker,
}

impl StatResult {
    pub(crate) fn new(statistic: f64, p_value: f64, n: usize, method: TestMethod) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            p_value,
            effect_size: None,
            ci_low: None,
            ci_high: None,
            n,
            method,
            significance_marker: SignificanceMarker::from_p(p_value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_thresholds_are_strict() {
        assert_eq!(
            SignificanceMarker::from_p(0.05),
            SignificanceMarker::NotSignificant
        );
        assert_eq!(
            SignificanceMarker::from_p(0.049_999),
            SignificanceMarker::P05
        );
        assert_eq!(SignificanceMarker::from_p(0.01), SignificanceMarker::P05);
        assert_eq!(SignificanceMarker::from_p(0.001), SignificanceMarker::P01);
        assert_eq!(
            SignificanceMarker::from_p(0.000_999),
            SignificanceMarker::P001
        );
        assert_eq!(
            SignificanceMarker::from_p(f64::NAN),
            SignificanceMarker::NotSignificant
        );
    }
}
