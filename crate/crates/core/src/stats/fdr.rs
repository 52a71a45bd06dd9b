use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhOutcome {
    pub reject: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Benjamini–Hochberg step-up at level `q`. Results are in input order.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<BhOutcome, StatsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(StatsError::InvalidQ(q));
    }
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidP(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let mf = m as f64;
    let cutoff = (0..m)
        .rev()
        .find(|&i| p_values[order[i]] <= (i + 1) as f64 * q / mf)
        .map(|i| p_values[order[i]]);

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for i in (0..m).rev() {
        let idx = order[i];
        running = running.min(mf * p_values[idx] / (i + 1) as f64);
        adjusted[idx] = running.min(1.0);
    }
    let reject = match cutoff {
        Some(c) => p_values.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    };
    Ok(BhOutcome { reject, adjusted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let out = bh_fdr(&[0.01, 0.02, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(out.reject, vec![true; 4]);
        assert!(out.adjusted.iter().all(|&a| (a - 0.04).abs() < 1e-15));
        let out = bh_fdr(&[0.5], 0.05).unwrap();
        assert_eq!(out.reject, vec![false]);
        assert_eq!(out.adjusted, vec![0.5]);
        assert_eq!(bh_fdr(&[1.2], 0.05), Err(StatsError::InvalidP(1.2)));
        assert!(bh_fdr(&[], 0.05).unwrap().reject.is_empty());
    }
}
