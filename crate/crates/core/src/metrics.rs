//! Per-(instance, condition) metric rows and run diagnostics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{c2_row, AttentionQuery};
use crate::condition::ConditionId;
use crate::density::{
    aggregate_segment, aggregate_shape, layer_energy_gini, weighted_global, DensityMetric,
    KeyPosition, Segment, SegmentMean, SegmentPartition, TokenScope, DEFAULT_ALPHA,
};
use crate::error::MetricError;
use crate::prompt::DomainId;
use crate::stability::c3_row;
use crate::trace::{ConditionTrace, TraceBundle, TraceManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeStat {
    Gini,
    Kurtosis,
    PosRatio,
}

impl ShapeStat {
    pub const ALL: [ShapeStat; 3] = [ShapeStat::Gini, ShapeStat::Kurtosis, ShapeStat::PosRatio];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeStat::Gini => "gini",
            ShapeStat::Kurtosis => "kurtosis",
            ShapeStat::PosRatio => "posratio",
        }
    }
}

/// One column of a metric table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Density {
        kind: DensityMetric,
        scope: TokenScope,
        segment: Segment,
    },
    /// Shape statistics, prompt scope only.
    Shape {
        stat: ShapeStat,
        segment: Segment,
    },
    LayerEnergyGini(KeyPosition),
    AttnShare(AttentionQuery),
    /// 1 when the instance has no matched keyword positions, else 0.
    MissingKeywords,
    MeanEntropy,
    SemanticMf1,
    SemanticVar,
    ConfidenceMargin,
}

impl Metric {
    pub const fn hoyer(scope: TokenScope, segment: Segment) -> Self {
        Metric::Density {
            kind: DensityMetric::Hoyer,
            scope,
            segment,
        }
    }

    pub const fn topk(scope: TokenScope, segment: Segment) -> Self {
        Metric::Density {
            kind: DensityMetric::TopK,
            scope,
            segment,
        }
    }

    /// Every column in canonical order. Shape statistics are included only
    /// when `shape_stats` is set.
    pub fn all(shape_stats: bool) -> Vec<Metric> {
        let mut out = Vec::new();
        for kind in [DensityMetric::Hoyer, DensityMetric::TopK] {
            for scope in [TokenScope::Prompt, TokenScope::FirstGen] {
                for segment in Segment::ALL {
                    out.push(Metric::Density {
                        kind,
                        scope,
                        segment,
                    });
                }
            }
        }
        if shape_stats {
            for stat in ShapeStat::ALL {
                for segment in Segment::ALL {
                    out.push(Metric::Shape { stat, segment });
                }
            }
        }
        out.push(Metric::LayerEnergyGini(KeyPosition::PromptLast));
        out.push(Metric::LayerEnergyGini(KeyPosition::FirstGen));
        out.push(Metric::AttnShare(AttentionQuery::PromptLast));
        out.push(Metric::AttnShare(AttentionQuery::FirstGen));
        out.push(Metric::MissingKeywords);
        out.push(Metric::MeanEntropy);
        out.push(Metric::SemanticMf1);
        out.push(Metric::SemanticVar);
        out.push(Metric::ConfidenceMargin);
        out
    }

    pub fn name(&self) -> String {
        match self {
            Metric::Density {
                kind,
                scope,
                segment,
            } => {
                let k = match kind {
                    DensityMetric::Hoyer => "hoyer",
                    DensityMetric::TopK => "topk",
                };
                format!("{k}_{}_{}", scope.as_str(), segment.as_str())
            }
            Metric::Shape { stat, segment } => {
                format!("{}_prompt_{}", stat.as_str(), segment.as_str())
            }
            Metric::LayerEnergyGini(p) => format!("layer_energy_gini_{}", p.as_str()),
            Metric::AttnShare(q) => format!("attn_share_{}", q.as_str()),
            Metric::MissingKeywords => "missing_keywords".to_string(),
            Metric::MeanEntropy => "mean_entropy".to_string(),
            Metric::SemanticMf1 => "semantic_mf1".to_string(),
            Metric::SemanticVar => "semantic_var".to_string(),
            Metric::ConfidenceMargin => "confidence_margin".to_string(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown metric `{0}`")]
pub struct UnknownMetric(pub String);

impl FromStr for Metric {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::all(true)
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Top-k fraction.
    pub alpha: f64,
    pub shape_stats: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            shape_stats: true,
        }
    }
}

/// Metric values for one (instance, condition). A value is `None` when it
/// is undefined for this trace: every contributing vector was degenerate,
/// or the input (such as option scores) is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub instance_id: String,
    pub domain: DomainId,
    pub condition: ConditionId,
    pub values: BTreeMap<Metric, Option<f64>>,
}

impl MetricRow {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.get(&metric).copied().flatten()
    }
}

/// Counters for one condition across a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConditionDiagnostics {
    pub traces: usize,
    /// All-zero hidden vectors skipped in density means.
    pub degenerate_vectors: usize,
    /// Prompt vectors with zero variance, skipped in kurtosis means.
    pub degenerate_kurtosis: usize,
    /// Key positions with zero total layer energy.
    pub degenerate_layer_energy: usize,
    pub missing_keywords: usize,
    /// Metric cells left undefined.
    pub undefined_values: usize,
}

impl ConditionDiagnostics {
    pub fn missing_keyword_rate(&self) -> f64 {
        if self.traces == 0 {
            0.0
        } else {
            self.missing_keywords as f64 / self.traces as f64
        }
    }

    fn absorb(&mut self, other: &ConditionDiagnostics) {
        self.traces += other.traces;
        self.degenerate_vectors += other.degenerate_vectors;
        self.degenerate_kurtosis += other.degenerate_kurtosis;
        self.degenerate_layer_energy += other.degenerate_layer_energy;
        self.missing_keywords += other.missing_keywords;
        self.undefined_values += other.undefined_values;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub per_condition: BTreeMap<ConditionId, ConditionDiagnostics>,
}

impl RunDiagnostics {
    pub fn total(&self) -> ConditionDiagnostics {
        let mut out = ConditionDiagnostics::default();
        for d in self.per_condition.values() {
            out.absorb(d);
        }
        out
    }

    pub fn absorb(&mut self, other: &RunDiagnostics) {
        for (c, d) in &other.per_condition {
            self.per_condition.entry(*c).or_default().absorb(d);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("instance `{instance}`, condition {condition}: {source}")]
pub struct RowError {
    pub instance: String,
    pub condition: ConditionId,
    #[source]
    pub source: MetricError,
}

/// Computes every configured metric for one condition trace and adds its
/// degenerate flags to `diag`.
pub fn compute_metric_row(
    trace: &ConditionTrace,
    manifest: &TraceManifest,
    config: &MetricConfig,
    diag: &mut ConditionDiagnostics,
) -> Result<BTreeMap<Metric, Option<f64>>, MetricError> {
    let partition = SegmentPartition::new(manifest.num_layers)?;
    let mut values = BTreeMap::new();
    diag.traces += 1;

    for kind in [DensityMetric::Hoyer, DensityMetric::TopK] {
        for scope in [TokenScope::Prompt, TokenScope::FirstGen] {
            let mut thirds = [SegmentMean::default(); 3];
            for (slot, seg) in thirds.iter_mut().zip(Segment::THIRDS) {
                *slot = aggregate_segment(trace, &partition, seg, kind, scope, config.alpha)?;
            }
            let global = weighted_global(&partition, &thirds);
            if kind == DensityMetric::Hoyer {
                diag.degenerate_vectors += global.degenerate;
            }
            for (seg, m) in Segment::THIRDS
                .into_iter()
                .zip(&thirds)
                .chain([(Segment::Global, &global)])
            {
                values.insert(
                    Metric::Density {
                        kind,
                        scope,
                        segment: seg,
                    },
                    m.mean,
                );
            }
        }
    }

    if config.shape_stats {
        let mut thirds = [[SegmentMean::default(); 3]; 3];
        for (i, seg) in Segment::THIRDS.into_iter().enumerate() {
            let [g, k, p] = aggregate_shape(trace, &partition, seg)?;
            thirds[0][i] = g;
            thirds[1][i] = k;
            thirds[2][i] = p;
        }
        for (stat, per_seg) in ShapeStat::ALL.into_iter().zip(&thirds) {
            let global = weighted_global(&partition, per_seg);
            if stat == ShapeStat::Kurtosis {
                diag.degenerate_kurtosis += global.degenerate;
            }
            for (seg, m) in Segment::THIRDS
                .into_iter()
                .zip(per_seg)
                .chain([(Segment::Global, &global)])
            {
                values.insert(Metric::Shape { stat, segment: seg }, m.mean);
            }
        }
    }

    for pos in [KeyPosition::PromptLast, KeyPosition::FirstGen] {
        let g = layer_energy_gini(trace, manifest.num_layers, pos)?;
        if g.is_none() {
            diag.degenerate_layer_energy += 1;
        }
        values.insert(Metric::LayerEnergyGini(pos), g);
    }

    let c2 = c2_row(trace)?;
    if c2.missing_keywords {
        diag.missing_keywords += 1;
    }
    values.insert(
        Metric::AttnShare(AttentionQuery::PromptLast),
        Some(c2.share_prompt_last),
    );
    values.insert(
        Metric::AttnShare(AttentionQuery::FirstGen),
        Some(c2.share_first_gen),
    );
    values.insert(
        Metric::MissingKeywords,
        Some(if c2.missing_keywords { 1.0 } else { 0.0 }),
    );

    let c3 = c3_row(
        &trace.generations,
        trace.option_scores.as_ref(),
        manifest.vocab_size,
    )?;
    values.insert(Metric::MeanEntropy, Some(c3.mean_entropy));
    values.insert(Metric::SemanticMf1, Some(c3.semantic_mf1));
    values.insert(Metric::SemanticVar, Some(c3.semantic_var));
    values.insert(Metric::ConfidenceMargin, c3.confidence_margin);

    diag.undefined_values += values
        .iter()
        .filter(|(m, v)| v.is_none() && **m != Metric::ConfidenceMargin)
        .count();
    Ok(values)
}

/// Metric rows of one model, sorted by (instance id, condition).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub model_id: String,
    pub metrics: Vec<Metric>,
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn from_bundle(
        bundle: &TraceBundle,
        config: &MetricConfig,
    ) -> Result<(MetricTable, RunDiagnostics), RowError> {
        let manifest = &bundle.manifest;
        let mut diagnostics = RunDiagnostics::default();
        for &c in &manifest.conditions {
            diagnostics.per_condition.entry(c).or_default();
        }
        let mut rows = Vec::new();
        for inst in bundle.instances.values() {
            let domain = bundle
                .domain_of(&inst.instance_id)
                .unwrap_or(DomainId::Math);
            for trace in &inst.conditions {
                let diag = diagnostics
                    .per_condition
                    .entry(trace.condition)
                    .or_default();
                let values =
                    compute_metric_row(trace, manifest, config, diag).map_err(|source| {
                        RowError {
                            instance: inst.instance_id.clone(),
                            condition: trace.condition,
                            source,
                        }
                    })?;
                rows.push(MetricRow {
                    instance_id: inst.instance_id.clone(),
                    domain,
                    condition: trace.condition,
                    values,
                });
            }
        }
        let table = MetricTable {
            model_id: manifest.model_id.clone(),
            metrics: Metric::all(config.shape_stats),
            rows,
        };
        Ok((table, diagnostics))
    }

    pub fn get(&self, instance_id: &str, condition: ConditionId) -> Option<&MetricRow> {
        self.rows
            .binary_search_by(|r| {
                r.instance_id
                    .as_str()
                    .cmp(instance_id)
                    .then(r.condition.cmp(&condition))
            })
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Rows for one condition, in instance order.
    pub fn condition_rows(&self, condition: ConditionId) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(move |r| r.condition == condition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_are_unique() {
        let all = Metric::all(true);
        let mut names: Vec<String> = all.iter().map(Metric::name).collect();
        for (m, n) in all.iter().zip(&names) {
            assert_eq!(&n.parse::<Metric>().unwrap(), m);
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), all.len());
        assert_eq!(
            Metric::hoyer(TokenScope::Prompt, Segment::Early).name(),
            "hoyer_prompt_early"
        );
        assert_eq!(
            Metric::topk(TokenScope::FirstGen, Segment::Global).name(),
            "topk_firstgen_global"
        );
        assert!("bogus".parse::<Metric>().is_err());
    }

    #[test]
    fn canonical_order_matches_ord() {
        let all = Metric::all(true);
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
    }
}
