use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use super::correlation::ranks;
use super::special::{normal_two_sided, student_t_two_sided};
use super::{StatResult, StatsError, TestMethod, WILCOXON_EXACT_MAX_N};

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            actual: values.len(),
        });
    }
    check_finite(values)?;
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(sqrt(ss / (values.len() - 1) as f64))
}

/// Standard deviation with relative round-off treated as zero.
fn nonzero_sd(values: &[f64]) -> Result<f64, StatsError> {
    let sd = sample_sd(values)?;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if sd <= 1e-14 * scale || sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

pub fn mean_sem(values: &[f64]) -> Result<MeanSem, StatsError> {
    let sd = sample_sd(values)?;
    Ok(MeanSem {
        mean: mean(values),
        sem: sd / sqrt(values.len() as f64),
    })
}

/// `mean(Δ) / sd(Δ)`.
pub fn cohens_d_paired(deltas: &[f64]) -> Result<f64, StatsError> {
    let sd = nonzero_sd(deltas)?;
    Ok(mean(deltas) / sd)
}

/// One-sample t-test of the paired deltas against zero, two-sided, with
/// Cohen's d attached as the effect size.
pub fn paired_t(deltas: &[f64]) -> Result<StatResult, StatsError> {
    let sd = nonzero_sd(deltas)?;
    let n = deltas.len();
    let m = mean(deltas);
    let t = m / (sd / sqrt(n as f64));
    let p = student_t_two_sided(t, (n - 1) as f64);
    let mut r = StatResult::new(t, p, n, TestMethod::PairedT);
    r.effect_size = Some(m / sd);
    Ok(r)
}

/// Wilcoxon signed-rank test. Zeros are dropped, tied magnitudes share
/// average ranks, and the statistic is `min(W⁺, W⁻)`. For n ≤ 25 the
/// two-sided p-value is exact; above that a normal approximation with tie
/// and continuity corrections is used.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<StatResult, StatsError> {
    check_finite(deltas)?;
    let nonzero: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Err(StatsError::AllZero);
    }
    let mags: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let rk = ranks(&mags);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&rk)
        .filter(|(&d, _)| d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);

    if n <= WILCOXON_EXACT_MAX_N {
        let p = exact_two_sided(&rk, w);
        return Ok(StatResult::new(w, p, n, TestMethod::WilcoxonExact));
    }

    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    var -= tie_term(&mags) / 48.0;
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / sqrt(var);
    let mut r = StatResult::new(w, normal_two_sided(z), n, TestMethod::WilcoxonNormal);
    r.effect_size = None;
    Ok(r)
}

/// Σ (t³ − t) over groups of tied magnitudes.
fn tie_term(mags: &[f64]) -> f64 {
    let mut sorted = mags.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        acc += t * t * t - t;
        i = j;
    }
    acc
}

/// `min(1, 2 · P(W⁺ ≤ w))` under the sign-flip null, counted by dynamic
/// programming over doubled ranks (average ranks are multiples of ½).
fn exact_two_sided(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks
        .iter()
        .map(|r| libm::round(2.0 * r) as usize)
        .collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max_sum + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = libm::round(2.0 * w) as usize;
    let below: f64 = counts[..=limit.min(max_sum)].iter().sum();
    let all = libm::exp2(ranks.len() as f64);
    (2.0 * below / all).min(1.0)
}
