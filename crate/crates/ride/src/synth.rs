//! Synthetic trace bundles with planted effects.
//!
//! Control hidden vectors carry heavy-tailed (lognormal) magnitudes with
//! random signs. Every vector is then blended toward its mean magnitude by
//! the exact amount that puts its Hoyer sparsity on a target:
//!
//! * control: `h0_i`, drawn once per instance;
//! * treated: `h0_i + δ_seg + ε_i`, with `ε_i ~ N(0, σh)` shared by all
//!   segments of the (instance, condition).
//!
//! Blending `u = (1 − w)·a + w·ā` keeps the ℓ1 norm at `d·ā`, so the ℓ2
//! norm for a target `h` is `d·ā / (√d − h(√d − 1))` and `w` has a closed
//! form. The planted ΔHoyer of a segment is therefore `δ_seg + ε_i` to f32
//! precision.
//!
//! Mean entropy deltas are `shift + ρ(σe/σh)·ε_i + √(1 − ρ²)·σe·η_i`, which
//! makes the generating correlation between ΔHoyer and ΔEntropy exactly ρ.
//! Keyword attention shares are built per head so that the head-mean,
//! visible-renormalized share equals `s0_i + shift + noise`.
//!
//! All draws come from one ChaCha8 seed; instance `i` uses stream `i + 1`
//! so the output does not depend on generation order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ride_core::trace::{
    AttentionView, Decoding, GenerationRecord, HiddenSlab, InstanceEntry, OptionScores,
    SCHEMA_VERSION,
};
use ride_core::{
    ConditionId, ConditionTrace, DomainId, InstanceTraces, TraceBundle, TraceManifest,
};

use crate::bundle::{write_bundle, BundleError};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error("infeasible synth spec: {0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed synth spec: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDeltas {
    #[serde(default)]
    pub early: f64,
    #[serde(default)]
    pub middle: f64,
    #[serde(default)]
    pub late: f64,
}

/// Planted effect of one condition relative to control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEffect {
    #[serde(default)]
    pub hoyer_delta: SegmentDeltas,
    #[serde(default = "default_hoyer_noise")]
    pub hoyer_noise_sd: f64,
    /// Shift of the keyword attention share, both views.
    #[serde(default)]
    pub keyword_shift: f64,
    #[serde(default = "default_keyword_noise")]
    pub keyword_noise_sd: f64,
    #[serde(default)]
    pub entropy_shift: f64,
    /// Generating correlation between ΔHoyer and ΔEntropy.
    #[serde(default)]
    pub entropy_rho: f64,
    #[serde(default = "default_entropy_sd")]
    pub entropy_sd: f64,
    /// Spread of the K output embeddings around the instance direction.
    #[serde(default = "default_embedding_noise")]
    pub embedding_noise: f64,
}

fn default_hoyer_noise() -> f64 {
    0.01
}
fn default_keyword_noise() -> f64 {
    0.01
}
fn default_entropy_sd() -> f64 {
    0.1
}
fn default_embedding_noise() -> f64 {
    0.3
}
fn default_shards() -> u32 {
    1
}
fn default_base_hoyer() -> f64 {
    0.3
}
fn default_base_hoyer_sd() -> f64 {
    0.02
}

impl Default for ConditionEffect {
    fn default() -> Self {
        Self {
            hoyer_delta: SegmentDeltas::default(),
            hoyer_noise_sd: default_hoyer_noise(),
            keyword_shift: 0.0,
            keyword_noise_sd: default_keyword_noise(),
            entropy_shift: 0.0,
            entropy_rho: 0.0,
            entropy_sd: default_entropy_sd(),
            embedding_noise: default_embedding_noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub model_id: String,
    pub n_instances: usize,
    pub num_layers: u32,
    pub hidden_dim: u32,
    pub heads: u32,
    pub k: u32,
    /// Inclusive range of prompt lengths.
    pub prompt_tokens: [u32; 2],
    /// Inclusive range of generation lengths.
    pub gen_tokens: [u32; 2],
    pub embedding_dim: u32,
    #[serde(default = "default_shards")]
    pub shards: u32,
    pub seed: u64,
    #[serde(default)]
    pub missing_keyword_rate: f64,
    #[serde(default)]
    pub vocab_size: Option<u64>,
    #[serde(default = "default_base_hoyer")]
    pub base_hoyer: f64,
    #[serde(default = "default_base_hoyer_sd")]
    pub base_hoyer_sd: f64,
    /// Conditions to generate; must include control, whose effect is ignored
    /// apart from `embedding_noise`.
    pub conditions: BTreeMap<ConditionId, ConditionEffect>,
}

/// Lognormal shape of control magnitudes.
const MAGNITUDE_SIGMA: f64 = 1.2;
const MAX_REDRAWS: usize = 200;

impl SynthSpec {
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_instances == 0 {
            return bad("n_instances must be positive".into());
        }
        if self.num_layers < 3 {
            return bad(format!("num_layers = {} is below 3", self.num_layers));
        }
        if self.hidden_dim < 4 {
            return bad(format!("hidden_dim = {} is below 4", self.hidden_dim));
        }
        if self.heads == 0 || self.k < 2 || self.embedding_dim < 2 || self.shards == 0 {
            return bad("heads, shards must be positive; k and embedding_dim at least 2".into());
        }
        let [p0, p1] = self.prompt_tokens;
        if p0 < 3 || p1 < p0 {
            return bad("prompt_tokens must be a range with minimum at least 3".into());
        }
        let [g0, g1] = self.gen_tokens;
        if g0 == 0 || g1 < g0 {
            return bad("gen_tokens must be a range of positive lengths".into());
        }
        if !(0.0..=1.0).contains(&self.missing_keyword_rate) {
            return bad("missing_keyword_rate must be in [0, 1]".into());
        }
        if !self.conditions.contains_key(&ConditionId::Control) {
            return bad("conditions must include control".into());
        }
        let sd_ok = |x: f64| x.is_finite() && x >= 0.0;
        if !sd_ok(self.base_hoyer_sd) {
            return bad("base_hoyer_sd must be finite and nonnegative".into());
        }
        let mut lo = self.base_hoyer - 6.0 * self.base_hoyer_sd;
        let mut hi = self.base_hoyer + 6.0 * self.base_hoyer_sd;
        for (c, e) in &self.conditions {
            let d = e.hoyer_delta;
            let all = [d.early, d.middle, d.late, e.keyword_shift, e.entropy_shift];
            if all.iter().any(|x| !x.is_finite()) {
                return bad(format!("{c}: non-finite effect"));
            }
            if ![
                e.hoyer_noise_sd,
                e.keyword_noise_sd,
                e.entropy_sd,
                e.embedding_noise,
            ]
            .into_iter()
            .all(sd_ok)
            {
                return bad(format!("{c}: spreads must be finite and nonnegative"));
            }
            if !(e.entropy_rho > -1.0 && e.entropy_rho < 1.0) {
                return bad(format!("{c}: entropy_rho must be in (-1, 1)"));
            }
            if e.entropy_rho != 0.0 && e.hoyer_noise_sd == 0.0 {
                return Err(SynthError::Infeasible(format!(
                    "{c}: a nonzero entropy_rho needs hoyer_noise_sd > 0"
                )));
            }
            if *c != ConditionId::Control {
                for x in [d.early, d.middle, d.late] {
                    lo =
                        lo.min(self.base_hoyer + x - 6.0 * (self.base_hoyer_sd + e.hoyer_noise_sd));
                    hi =
                        hi.max(self.base_hoyer + x + 6.0 * (self.base_hoyer_sd + e.hoyer_noise_sd));
                }
                let s = e.keyword_shift;
                if 0.15 + s - 6.0 * e.keyword_noise_sd <= 0.0
                    || 0.35 + s + 6.0 * e.keyword_noise_sd >= 1.0
                {
                    return Err(SynthError::Infeasible(format!(
                        "{c}: keyword_shift {s} pushes shares out of (0, 1)"
                    )));
                }
                if 1.0 + e.entropy_shift - 6.0 * e.entropy_sd <= 0.0 {
                    return Err(SynthError::Infeasible(format!(
                        "{c}: entropy_shift {} can make entropies negative",
                        e.entropy_shift
                    )));
                }
            }
        }
        // Blending can only lower Hoyer below the raw magnitude profile.
        let ceiling = expected_raw_hoyer(self.hidden_dim as usize) - 0.05;
        if lo <= 0.0 || hi >= ceiling {
            return Err(SynthError::Infeasible(format!(
                "Hoyer targets span [{lo:.3}, {hi:.3}]; feasible range is (0, {ceiling:.3}) at d = {}",
                self.hidden_dim
            )));
        }
        Ok(())
    }
}

/// Large-d Hoyer of lognormal magnitudes: `E|x| / √E[x²] = exp(−σ²/2)`.
fn expected_raw_hoyer(d: usize) -> f64 {
    let sd = (d as f64).sqrt();
    let ratio = libm::exp(-MAGNITUDE_SIGMA * MAGNITUDE_SIGMA / 2.0);
    (sd - sd * ratio) / (sd - 1.0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn hoyer_of(mags: &[f64]) -> f64 {
    let d = mags.len() as f64;
    let l1: f64 = mags.iter().sum();
    let l2 = libm::sqrt(mags.iter().map(|x| x * x).sum::<f64>());
    (libm::sqrt(d) - l1 / l2) / (libm::sqrt(d) - 1.0)
}

/// Writes `d` values with Hoyer sparsity `target` into `out`.
fn hidden_vector(
    rng: &mut ChaCha8Rng,
    target: f64,
    scale: f64,
    out: &mut [f32],
) -> Result<(), SynthError> {
    let d = out.len();
    let sd = libm::sqrt(d as f64);
    for _ in 0..MAX_REDRAWS {
        let mags: Vec<f64> = (0..d)
            .map(|_| libm::exp(MAGNITUDE_SIGMA * normal(rng)))
            .collect();
        if hoyer_of(&mags) <= target {
            continue;
        }
        let mean = mags.iter().sum::<f64>() / d as f64;
        let spread: f64 = mags.iter().map(|a| (a - mean) * (a - mean)).sum();
        let ratio = sd - target * (sd - 1.0);
        let l2_sq = (d as f64 * mean / ratio).powi(2);
        let keep = libm::sqrt(((l2_sq - d as f64 * mean * mean) / spread).max(0.0));
        for (o, a) in out.iter_mut().zip(&mags) {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            *o = (sign * scale * (keep * a + (1.0 - keep) * mean)) as f32;
        }
        return Ok(());
    }
    Err(SynthError::Infeasible(format!(
        "Hoyer target {target:.4} is above what d = {d} magnitudes reach"
    )))
}

/// Nonnegative weights summing to `total`.
fn split(rng: &mut ChaCha8Rng, n: usize, total: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| -libm::log(1.0 - rng.gen::<f64>()) + 1e-3)
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| total * x / s).collect()
}

struct InstanceDraws {
    domain: DomainId,
    base_hoyer: f64,
    base_entropy: f64,
    base_share: [f64; 2],
    direction: Vec<f64>,
    missing_keywords: bool,
}

fn attention_view(
    rng: &mut ChaCha8Rng,
    heads: usize,
    p: usize,
    keywords: &[u32],
    share: f64,
) -> AttentionView {
    let mut weights = Vec::with_capacity(heads * p);
    let others: Vec<usize> = (1..p)
        .filter(|i| !keywords.contains(&(*i as u32)))
        .collect();
    for _ in 0..heads {
        let bos = uniform(rng, 0.2, 0.5);
        let mut row = vec![0.0f64; p];
        row[0] = bos;
        let on_kw = if keywords.is_empty() {
            0.0
        } else {
            (1.0 - bos) * share
        };
        for (&k, w) in keywords.iter().zip(split(rng, keywords.len(), on_kw)) {
            row[k as usize] = w;
        }
        for (&i, w) in others
            .iter()
            .zip(split(rng, others.len(), 1.0 - bos - on_kw))
        {
            row[i] = w;
        }
        weights.extend(row.into_iter().map(|w| w as f32));
    }
    AttentionView {
        heads,
        positions: p,
        weights,
    }
}

/// Builds the bundle described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<TraceBundle, SynthError> {
    spec.check()?;
    let mut rng0 = ChaCha8Rng::seed_from_u64(spec.seed);
    let seed_list: Vec<u64> = (0..spec.k).map(|_| rng0.gen::<u64>()).collect();
    let domains = [DomainId::Math, DomainId::Format, DomainId::Commonsense];
    let control = spec.conditions[&ConditionId::Control];

    let mut entries = Vec::with_capacity(spec.n_instances);
    let mut instances = Vec::with_capacity(spec.n_instances);
    for i in 0..spec.n_instances {
        let id = format!("syn-{i:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let mut direction: Vec<f64> = (0..spec.embedding_dim).map(|_| normal(&mut rng)).collect();
        let norm = libm::sqrt(direction.iter().map(|x| x * x).sum::<f64>());
        direction.iter_mut().for_each(|x| *x /= norm);
        let draws = InstanceDraws {
            domain: domains[i % domains.len()],
            base_hoyer: spec.base_hoyer + spec.base_hoyer_sd * normal(&mut rng),
            base_entropy: uniform(&mut rng, 1.0, 2.5),
            base_share: [uniform(&mut rng, 0.15, 0.35), uniform(&mut rng, 0.15, 0.35)],
            direction,
            missing_keywords: rng.gen::<f64>() < spec.missing_keyword_rate,
        };
        let mut traces = Vec::new();
        for (&cond, effect) in &spec.conditions {
            let effect = if cond == ConditionId::Control {
                ConditionEffect {
                    embedding_noise: control.embedding_noise,
                    hoyer_noise_sd: 0.0,
                    keyword_noise_sd: 0.0,
                    entropy_sd: 0.0,
                    ..ConditionEffect::default()
                }
            } else {
                *effect
            };
            traces.push(condition_trace(
                spec, &seed_list, &draws, cond, &effect, &mut rng,
            )?);
        }
        entries.push(InstanceEntry {
            id: id.clone(),
            shard: (i % spec.shards as usize) as u32,
            domain: draws.domain,
        });
        instances.push(InstanceTraces::new(id, traces));
    }

    let manifest = TraceManifest {
        schema_version: SCHEMA_VERSION,
        model_id: spec.model_id.clone(),
        num_layers: spec.num_layers,
        hidden_dim: spec.hidden_dim,
        conditions: spec.conditions.keys().copied().collect(),
        instances: entries,
        decoding: Decoding {
            k: spec.k,
            ..Decoding::default()
        },
        seed_list,
        vocab_size: spec.vocab_size,
        encoder_id: Some("synthetic".into()),
    };
    Ok(TraceBundle::new(manifest, instances))
}

fn condition_trace(
    spec: &SynthSpec,
    seed_list: &[u64],
    draws: &InstanceDraws,
    cond: ConditionId,
    effect: &ConditionEffect,
    rng: &mut ChaCha8Rng,
) -> Result<ConditionTrace, SynthError> {
    let eps = effect.hoyer_noise_sd * normal(rng);
    let eta = normal(rng);
    let rho = effect.entropy_rho;
    let coupled = if effect.hoyer_noise_sd > 0.0 {
        rho * effect.entropy_sd / effect.hoyer_noise_sd * eps
    } else {
        0.0
    };
    let entropy = draws.base_entropy
        + effect.entropy_shift
        + coupled
        + libm::sqrt(1.0 - rho * rho) * effect.entropy_sd * eta;
    if entropy <= 0.0 {
        return Err(SynthError::Infeasible(format!(
            "{cond}: drew a nonpositive mean entropy"
        )));
    }

    let p = rng.gen_range(spec.prompt_tokens[0]..=spec.prompt_tokens[1]) as usize;
    let d = spec.hidden_dim as usize;
    let l = spec.num_layers;
    let partition =
        ride_core::SegmentPartition::new(l).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let positions: Vec<u32> = (0..=p as u32).collect();
    let mut data = vec![0.0f32; l as usize * positions.len() * d];
    let delta = effect.hoyer_delta;
    for layer in 1..=l {
        let seg_delta = if partition.early.contains(&layer) {
            delta.early
        } else if partition.middle.contains(&layer) {
            delta.middle
        } else {
            delta.late
        };
        let target = draws.base_hoyer + seg_delta + eps;
        let scale = libm::exp(0.3 * normal(rng));
        for t in 0..positions.len() {
            let start = ((layer as usize - 1) * positions.len() + t) * d;
            hidden_vector(rng, target, scale, &mut data[start..start + d])?;
        }
    }
    let hidden = HiddenSlab {
        layers: (1..=l).collect(),
        positions,
        dim: d,
        data,
    };

    let mut visible_mask = vec![true; p];
    visible_mask[0] = false;
    let keyword_positions: Vec<u32> = if draws.missing_keywords {
        Vec::new()
    } else {
        let count = if p >= 5 && rng.gen::<bool>() { 2 } else { 1 };
        let mut pool: Vec<u32> = (1..p as u32).collect();
        let mut picked = Vec::with_capacity(count);
        for _ in 0..count {
            let j = rng.gen_range(0..pool.len() as u32) as usize;
            picked.push(pool.swap_remove(j));
        }
        picked.sort_unstable();
        picked
    };
    let mut views = Vec::with_capacity(2);
    for base in draws.base_share {
        let share = base + effect.keyword_shift + effect.keyword_noise_sd * normal(rng);
        if !(share > 0.0 && share < 1.0) {
            return Err(SynthError::Infeasible(format!(
                "{cond}: drew keyword share {share}"
            )));
        }
        views.push(attention_view(
            rng,
            spec.heads as usize,
            p,
            &keyword_positions,
            share,
        ));
    }
    let attention_first_gen = views.pop().expect("two views");
    let attention_prompt_last = views.pop().expect("two views");

    let k = spec.k as usize;
    let mut gen_means: Vec<f64> = (0..k).map(|_| libm::exp(0.1 * normal(rng))).collect();
    let m = gen_means.iter().sum::<f64>() / k as f64;
    gen_means.iter_mut().for_each(|g| *g *= entropy / m);
    let mut generations = Vec::with_capacity(k);
    for (j, &g) in gen_means.iter().enumerate() {
        let t = rng.gen_range(spec.gen_tokens[0]..=spec.gen_tokens[1]) as usize;
        let mut tokens: Vec<f64> = (0..t).map(|_| libm::exp(0.5 * normal(rng))).collect();
        let tm = tokens.iter().sum::<f64>() / t as f64;
        tokens.iter_mut().for_each(|x| *x *= g / tm);
        let mut emb: Vec<f64> = draws
            .direction
            .iter()
            .map(|x| {
                x + effect.embedding_noise * normal(rng) / libm::sqrt(spec.embedding_dim as f64)
            })
            .collect();
        let norm = libm::sqrt(emb.iter().map(|x| x * x).sum::<f64>());
        emb.iter_mut().for_each(|x| *x /= norm);
        generations.push(GenerationRecord {
            text: format!("{cond} sample {j}"),
            token_count: t as u32,
            token_entropies: Some(tokens.into_iter().map(|x| x as f32).collect()),
            token_distributions: None,
            embedding: emb.into_iter().map(|x| x as f32).collect(),
            seed: seed_list[j],
        });
    }

    let option_scores = (draws.domain == DomainId::Commonsense).then(|| {
        let names = ["A", "B", "C", "D"];
        let mut options: Vec<(String, Vec<f32>)> =
            names.iter().map(|n| (n.to_string(), Vec::new())).collect();
        for _ in 0..2 {
            let gold = uniform(rng, 0.3, 0.6);
            let rest = split(rng, names.len() - 1, 1.0 - gold);
            options[0].1.push(gold as f32);
            for (o, r) in options[1..].iter_mut().zip(rest) {
                o.1.push(r as f32);
            }
        }
        OptionScores {
            options,
            gold: "A".into(),
        }
    });

    Ok(ConditionTrace {
        condition: cond,
        prompt_token_count: p as u32,
        hidden,
        attention_prompt_last,
        attention_first_gen,
        visible_mask,
        keyword_positions,
        generations,
        option_scores,
    })
}

/// Generates and writes the bundle; with `shards > 1`, one bundle per shard
/// under `out/shard-<n>`.
pub fn write_synth(spec: &SynthSpec, out: &Path) -> Result<TraceBundle, SynthError> {
    let bundle = generate(spec)?;
    if spec.shards == 1 {
        write_bundle(&bundle, out)?;
    } else {
        for s in 0..spec.shards {
            write_bundle(&bundle.shard(s), &out.join(format!("shard-{s}")))?;
        }
    }
    Ok(bundle)
}
