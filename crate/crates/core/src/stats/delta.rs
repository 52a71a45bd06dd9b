use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::condition::ConditionId;
use crate::metrics::{Metric, MetricTable};
use crate::prompt::DomainId;

use super::StatsError;

/// Per-instance differences `M(m) − M(b)` for every metric column, over
/// instances present under both conditions, in instance-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    pub model_id: String,
    pub condition: ConditionId,
    pub baseline: ConditionId,
    pub instance_ids: Vec<String>,
    pub domains: Vec<DomainId>,
    /// Aligned with `instance_ids`; `None` where either side is undefined.
    pub columns: BTreeMap<Metric, Vec<Option<f64>>>,
}

impl DeltaTable {
    pub fn n(&self) -> usize {
        self.instance_ids.len()
    }

    /// Defined deltas of one metric, in instance order.
    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.columns
            .get(&metric)
            .map(|c| c.iter().flatten().copied().collect())
            .unwrap_or_default()
    }

    /// Deltas of one metric restricted to one domain.
    pub fn values_in(&self, metric: Metric, domain: DomainId) -> Vec<f64> {
        let Some(col) = self.columns.get(&metric) else {
            return Vec::new();
        };
        col.iter()
            .zip(&self.domains)
            .filter(|(_, d)| **d == domain)
            .filter_map(|(v, _)| *v)
            .collect()
    }

    /// Instance-aligned pairs where both metrics are defined.
    pub fn pairs(&self, x: Metric, y: Metric) -> (Vec<f64>, Vec<f64>) {
        let (Some(cx), Some(cy)) = (self.columns.get(&x), self.columns.get(&y)) else {
            return (Vec::new(), Vec::new());
        };
        cx.iter()
            .zip(cy)
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .unzip()
    }
}

/// Inner join of the `m` and `b` rows of `table` on instance id.
pub fn paired_deltas(
    table: &MetricTable,
    m: ConditionId,
    b: ConditionId,
) -> Result<DeltaTable, StatsError> {
    let mut instance_ids = Vec::new();
    let mut domains = Vec::new();
    let mut columns: BTreeMap<Metric, Vec<Option<f64>>> =
        table.metrics.iter().map(|&k| (k, Vec::new())).collect();
    for row_m in table.condition_rows(m) {
        let Some(row_b) = table.get(&row_m.instance_id, b) else {
            continue;
        };
        instance_ids.push(row_m.instance_id.clone());
        domains.push(row_m.domain);
        for (metric, col) in columns.iter_mut() {
            let d = match (row_m.get(*metric), row_b.get(*metric)) {
                (Some(x), Some(y)) => Some(x - y).filter(|v| v.is_finite()),
                _ => None,
            };
            col.push(d);
        }
    }
    if instance_ids.is_empty() {
        return Err(StatsError::NoPairs);
    }
    Ok(DeltaTable {
        model_id: table.model_id.clone(),
        condition: m,
        baseline: b,
        instance_ids,
        domains,
        columns,
    })
}
