use alloc::vec;
use alloc::vec::Vec;

use libm::{atanh, sqrt, tanh};
use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided;
use super::{StatResult, StatsError, TestMethod};

/// Two-sided 95% normal quantile used for Fisher intervals.
const Z_975: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

impl CorrelationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        }
    }
}

/// 1-based ranks with ties given their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            out[k] = avg;
        }
        i = j;
    }
    out
}

fn product_moment(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewPoints {
            needed: 3,
            actual: x.len(),
        });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn finish(r: f64, n: usize, method: TestMethod) -> StatResult {
    let nf = n as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * sqrt((nf - 2.0) / (1.0 - r * r));
        student_t_two_sided(t, nf - 2.0)
    };
    let (lo, hi) = fisher_ci(r, n);
    let mut out = StatResult::new(r, p, n, method);
    out.effect_size = Some(r);
    out.ci_low = Some(lo);
    out.ci_high = Some(hi);
    out
}

/// 95% interval from `atanh(r) ± 1.96/√(n−3)`. With n = 3 the standard
/// error is unbounded and the interval is (−1, 1).
pub fn fisher_ci(r: f64, n: usize) -> (f64, f64) {
    if r.abs() >= 1.0 {
        return (r, r);
    }
    if n <= 3 {
        return (-1.0, 1.0);
    }
    let z = atanh(r);
    let half = Z_975 / sqrt((n - 3) as f64);
    (tanh(z - half), tanh(z + half))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<StatResult, StatsError> {
    check_inputs(x, y)?;
    let r = product_moment(x, y)?;
    Ok(finish(r, x.len(), TestMethod::Pearson))
}

pub fn correlation(
    x: &[f64],
    y: &[f64],
    method: CorrelationMethod,
) -> Result<StatResult, StatsError> {
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => {
            check_inputs(x, y)?;
            let r = product_moment(&ranks(x), &ranks(y))?;
            Ok(finish(r, x.len(), TestMethod::Spearman))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn perfect_lines() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        let x = [0.3, -1.2, 2.5, 0.9, 4.4];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap().statistic + 1.0).abs() < 1e-12);
        let s = correlation(&x, &y, CorrelationMethod::Spearman).unwrap();
        assert!((s.statistic + 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::ConstantInput)
        );
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn fisher_interval() {
        // reference from 30-digit evaluation
        let (lo, hi) = fisher_ci(0.5, 50);
        assert!((lo - 0.257_482_955_666_954_49).abs() < 1e-12, "{lo}");
        assert!((hi - 0.683_259_102_993_046_95).abs() < 1e-12, "{hi}");
        // four-decimal truncation, as usually quoted
        assert_eq!(libm::trunc(lo * 1e4) / 1e4, 0.2574);
        assert_eq!(libm::trunc(hi * 1e4) / 1e4, 0.6832);
        assert_eq!(fisher_ci(0.2, 3), (-1.0, 1.0));
    }
}
