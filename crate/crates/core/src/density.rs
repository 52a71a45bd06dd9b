//! C1 density metrics over hidden-state vectors.
//!
//! Token-level metrics are computed per (layer, token) vector and then
//! averaged over a layer segment and a token scope. All sums run
//! left-to-right in ascending index order so results are bit-reproducible.
//! Zero vectors yield `None` ("degenerate"); segment means skip them and
//! report how many were skipped.

use alloc::vec::Vec;
use core::ops::RangeInclusive;

use libm::{floor, sqrt};
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::trace::{ConditionTrace, HiddenSlab};

/// Default top-k fraction.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[inline]
fn to_f64<T: Copy + Into<f64>>(v: &[T]) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(|&x| x.into())
}

/// Hoyer sparsity `(√d − ‖v‖₁/‖v‖₂) / (√d − 1)`; 1 for one-hot, 0 for
/// uniform magnitude. `None` for the zero vector.
///
/// Panics if `v.len() < 2`.
pub fn hoyer<T: Copy + Into<f64>>(v: &[T]) -> Option<f64> {
    assert!(v.len() >= 2, "hoyer needs d >= 2");
    let (mut l1, mut sq) = (0.0f64, 0.0f64);
    for x in to_f64(v) {
        l1 += x.abs();
        sq += x * x;
    }
    if sq == 0.0 {
        return None;
    }
    let root_d = sqrt(v.len() as f64);
    let h = (root_d - l1 / sqrt(sq)) / (root_d - 1.0);
    Some(h.clamp(0.0, 1.0))
}

/// `max(1, ⌊αd⌋)`, capped at `d`. A 1e-9 slack absorbs products such as
/// `0.29 * 100 = 28.999…`.
pub fn topk_count(d: usize, alpha: f64) -> usize {
    let k = floor(alpha * d as f64 + 1e-9) as usize;
    k.clamp(1, d.max(1))
}

/// Fraction of squared energy held by the `k` largest-magnitude coordinates.
/// Ties are broken by lower index.
pub fn topk_energy_k<T: Copy + Into<f64>>(v: &[T], k: usize) -> Option<f64> {
    let mut total = 0.0f64;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for (i, x) in to_f64(v).enumerate() {
        total += x * x;
        order.push((x.abs(), i));
    }
    if total == 0.0 {
        return None;
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let top: f64 = order.iter().take(k).map(|&(a, _)| a * a).sum();
    Some((top / total).clamp(0.0, 1.0))
}

/// Top-k energy ratio with `k = max(1, ⌊αd⌋)`.
pub fn topk_energy<T: Copy + Into<f64>>(v: &[T], alpha: f64) -> Option<f64> {
    assert!(v.len() >= 2, "topk_energy needs d >= 2");
    topk_energy_k(v, topk_count(v.len(), alpha))
}

/// Gini coefficient of `|vᵢ|`:
/// `Σᵢ Σⱼ ||vᵢ| − |vⱼ|| / (2 d Σᵢ |vᵢ|)`, evaluated through the sorted
/// form `2 Σᵢ (2i − d − 1) a₍ᵢ₎`. `None` when all magnitudes are zero.
pub fn gini<T: Copy + Into<f64>>(v: &[T]) -> Option<f64> {
    let mut mags: Vec<f64> = to_f64(v).map(f64::abs).collect();
    let total: f64 = mags.iter().sum();
    if total == 0.0 || mags.is_empty() {
        return None;
    }
    mags.sort_by(f64::total_cmp);
    let d = mags.len() as f64;
    let weighted: f64 = mags
        .iter()
        .enumerate()
        .map(|(i, &a)| (2.0 * (i as f64 + 1.0) - d - 1.0) * a)
        .sum();
    Some((2.0 * weighted / (2.0 * d * total)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub gini: Option<f64>,
    /// Population excess kurtosis.
    pub kurtosis: Option<f64>,
    pub pos_ratio: f64,
}

/// Excess kurtosis with the biased moment estimator; `None` at zero variance.
pub fn excess_kurtosis<T: Copy + Into<f64>>(v: &[T]) -> Option<f64> {
    let n = v.len() as f64;
    let mean = to_f64(v).sum::<f64>() / n;
    let (mut m2, mut m4, mut sq) = (0.0f64, 0.0f64, 0.0f64);
    for x in to_f64(v) {
        let c = x - mean;
        let c2 = c * c;
        m2 += c2;
        m4 += c2 * c2;
        sq += x * x;
    }
    m2 /= n;
    m4 /= n;
    // rounding leaves a tiny m2 for constant vectors
    if m2 <= 1e-24 * (sq / n) || m2 == 0.0 {
        return None;
    }
    Some(m4 / (m2 * m2) - 3.0)
}

pub fn shape_stats<T: Copy + Into<f64>>(v: &[T]) -> ShapeStats {
    assert!(v.len() >= 2, "shape_stats needs d >= 2");
    let positive = v.iter().filter(|&&x| x.into() > 0.0).count();
    ShapeStats {
        gini: gini(v),
        kurtosis: excess_kurtosis(v),
        pos_ratio: positive as f64 / v.len() as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Early,
    Middle,
    Late,
    Global,
}

impl Segment {
    pub const ALL: [Segment; 4] = [
        Segment::Early,
        Segment::Middle,
        Segment::Late,
        Segment::Global,
    ];
    pub const THIRDS: [Segment; 3] = [Segment::Early, Segment::Middle, Segment::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Early => "early",
            Segment::Middle => "middle",
            Segment::Late => "late",
            Segment::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

/// Early / middle / late thirds of a stack of `L` layers (1-based, inclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPartition {
    pub num_layers: u32,
    pub early: RangeInclusive<u32>,
    pub middle: RangeInclusive<u32>,
    pub late: RangeInclusive<u32>,
}

impl SegmentPartition {
    pub fn new(num_layers: u32) -> Result<Self, MetricError> {
        if num_layers < 3 {
            return Err(MetricError::TooFewLayers(num_layers));
        }
        let a = num_layers / 3;
        let b = 2 * num_layers / 3;
        Ok(Self {
            num_layers,
            early: 1..=a,
            middle: a + 1..=b,
            late: b + 1..=num_layers,
        })
    }

    pub fn range(&self, segment: Segment) -> RangeInclusive<u32> {
        match segment {
            Segment::Early => self.early.clone(),
            Segment::Middle => self.middle.clone(),
            Segment::Late => self.late.clone(),
            Segment::Global => 1..=self.num_layers,
        }
    }

    pub fn layer_count(&self, segment: Segment) -> u32 {
        let r = self.range(segment);
        r.end() + 1 - r.start()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMetric {
    Hoyer,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScope {
    /// Every sampled prompt position.
    Prompt,
    /// The first generated token only.
    FirstGen,
}

impl TokenScope {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenScope::Prompt => "prompt",
            TokenScope::FirstGen => "firstgen",
        }
    }
}

/// Mean of a token-level metric over a segment, with the number of
/// degenerate vectors that were left out. `mean` is `None` when every
/// vector was degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentMean {
    pub mean: Option<f64>,
    pub used: usize,
    pub degenerate: usize,
}

impl SegmentMean {
    pub fn value_or_zero(&self) -> f64 {
        self.mean.unwrap_or(0.0)
    }
}

/// Slab row indices for a token scope.
pub fn scope_positions(
    trace: &ConditionTrace,
    scope: TokenScope,
) -> Result<Vec<usize>, MetricError> {
    let slab = &trace.hidden;
    match scope {
        TokenScope::Prompt => Ok(slab
            .positions
            .iter()
            .enumerate()
            .filter(|(_, &p)| p < trace.prompt_token_count)
            .map(|(i, _)| i)
            .collect()),
        TokenScope::FirstGen => {
            let p = trace.first_gen_position();
            slab.position_index(p)
                .map(|i| alloc::vec![i])
                .ok_or(MetricError::PositionNotSampled(p))
        }
    }
}

/// Unweighted mean of `metric` over every (layer ∈ `layers`, row ∈ `rows`)
/// vector, ascending layer then token.
pub fn mean_over<F>(
    slab: &HiddenSlab,
    layers: RangeInclusive<u32>,
    rows: &[usize],
    metric: F,
) -> Result<SegmentMean, MetricError>
where
    F: Fn(&[f32]) -> Option<f64>,
{
    let mut sum = 0.0f64;
    let mut out = SegmentMean::default();
    for layer in layers {
        let li = slab
            .layer_index(layer)
            .ok_or(MetricError::LayerNotSampled(layer))?;
        for &ti in rows {
            match metric(slab.vector(li, ti)) {
                Some(v) => {
                    sum += v;
                    out.used += 1;
                }
                None => out.degenerate += 1,
            }
        }
    }
    if out.used > 0 {
        out.mean = Some(sum / out.used as f64);
    }
    Ok(out)
}

/// Combines per-third means into the global value, weighting each third by
/// its layer count.
pub fn weighted_global(partition: &SegmentPartition, thirds: &[SegmentMean; 3]) -> SegmentMean {
    let mut out = SegmentMean::default();
    let mut acc = 0.0f64;
    let mut weight = 0.0f64;
    for (seg, m) in Segment::THIRDS.iter().zip(thirds) {
        out.used += m.used;
        out.degenerate += m.degenerate;
        if let Some(v) = m.mean {
            let w = partition.layer_count(*seg) as f64;
            acc += w * v;
            weight += w;
        }
    }
    if weight > 0.0 {
        out.mean = Some(acc / weight);
    }
    out
}

fn segment_mean_with<F>(
    trace: &ConditionTrace,
    partition: &SegmentPartition,
    segment: Segment,
    scope: TokenScope,
    metric: F,
) -> Result<SegmentMean, MetricError>
where
    F: Fn(&[f32]) -> Option<f64> + Copy,
{
    let rows = scope_positions(trace, scope)?;
    if segment == Segment::Global {
        let mut thirds = [SegmentMean::default(); 3];
        for (slot, seg) in thirds.iter_mut().zip(Segment::THIRDS) {
            *slot = mean_over(&trace.hidden, partition.range(seg), &rows, metric)?;
        }
        return Ok(weighted_global(partition, &thirds));
    }
    mean_over(&trace.hidden, partition.range(segment), &rows, metric)
}

/// Segment-level Hoyer or top-k energy for one condition trace.
pub fn aggregate_segment(
    trace: &ConditionTrace,
    partition: &SegmentPartition,
    segment: Segment,
    metric: DensityMetric,
    scope: TokenScope,
    alpha: f64,
) -> Result<SegmentMean, MetricError> {
    match metric {
        DensityMetric::Hoyer => segment_mean_with(trace, partition, segment, scope, |v| hoyer(v)),
        DensityMetric::TopK => {
            segment_mean_with(trace, partition, segment, scope, |v| topk_energy(v, alpha))
        }
    }
}

/// Segment means of the three shape statistics over the prompt scope.
pub fn aggregate_shape(
    trace: &ConditionTrace,
    partition: &SegmentPartition,
    segment: Segment,
) -> Result<[SegmentMean; 3], MetricError> {
    Ok([
        segment_mean_with(trace, partition, segment, TokenScope::Prompt, |v| gini(v))?,
        segment_mean_with(trace, partition, segment, TokenScope::Prompt, |v| {
            excess_kurtosis(v)
        })?,
        segment_mean_with(trace, partition, segment, TokenScope::Prompt, |v| {
            Some(shape_stats(v).pos_ratio)
        })?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPosition {
    PromptLast,
    FirstGen,
}

impl KeyPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyPosition::PromptLast => "prompt_last",
            KeyPosition::FirstGen => "first_gen",
        }
    }
}

/// Gini of the normalized per-layer energy `‖h⁽ˡ⁾_{t*}‖²` across all `L`
/// layers at one key position. `None` when the total energy is zero.
pub fn layer_energy_gini(
    trace: &ConditionTrace,
    num_layers: u32,
    position: KeyPosition,
) -> Result<Option<f64>, MetricError> {
    let t = match position {
        KeyPosition::PromptLast => trace.prompt_last_position(),
        KeyPosition::FirstGen => trace.first_gen_position(),
    };
    let slab = &trace.hidden;
    let ti = slab
        .position_index(t)
        .ok_or(MetricError::PositionNotSampled(t))?;
    let mut energies = Vec::with_capacity(num_layers as usize);
    for layer in 1..=num_layers {
        let li = slab
            .layer_index(layer)
            .ok_or(MetricError::LayerNotSampled(layer))?;
        let e: f64 = to_f64(slab.vector(li, ti)).map(|x| x * x).sum();
        energies.push(e);
    }
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return Ok(None);
    }
    for e in energies.iter_mut() {
        *e /= total;
    }
    Ok(gini(&energies))
}
