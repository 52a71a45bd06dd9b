//! In-memory trace bundle: manifest, per-instance condition traces, merge.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::condition::ConditionId;
use crate::prompt::DomainId;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    /// Number of sampled generations per (instance, condition).
    pub k: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            max_new_tokens: 64,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceEntry {
    pub id: String,
    pub shard: u32,
    pub domain: DomainId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub schema_version: u32,
    pub model_id: String,
    pub num_layers: u32,
    pub hidden_dim: u32,
    pub conditions: Vec<ConditionId>,
    pub instances: Vec<InstanceEntry>,
    pub decoding: Decoding,
    pub seed_list: Vec<u64>,
    /// Needed to spread the tail mass of sparse distributions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_id: Option<String>,
}

impl TraceManifest {
    /// First header field that differs, if any. Instance lists are ignored.
    pub fn header_mismatch(&self, other: &TraceManifest) -> Option<&'static str> {
        if self.schema_version != other.schema_version {
            Some("schema_version")
        } else if self.model_id != other.model_id {
            Some("model_id")
        } else if self.num_layers != other.num_layers {
            Some("num_layers")
        } else if self.hidden_dim != other.hidden_dim {
            Some("hidden_dim")
        } else if self.conditions != other.conditions {
            Some("conditions")
        } else if self.decoding != other.decoding {
            Some("decoding")
        } else if self.seed_list != other.seed_list {
            Some("seed_list")
        } else if self.vocab_size != other.vocab_size {
            Some("vocab_size")
        } else if self.encoder_id != other.encoder_id {
            Some("encoder_id")
        } else {
            None
        }
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceEntry> {
        self.instances.iter().find(|e| e.id == id)
    }
}

/// Hidden states for sampled layers × sampled token positions, row-major
/// `[layer][token][dim]`. Layers are 1-based.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HiddenSlab {
    pub layers: Vec<u32>,
    pub positions: Vec<u32>,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl HiddenSlab {
    pub fn layer_index(&self, layer: u32) -> Option<usize> {
        self.layers.binary_search(&layer).ok()
    }

    pub fn position_index(&self, position: u32) -> Option<usize> {
        self.positions.binary_search(&position).ok()
    }

    pub fn vector(&self, layer_idx: usize, pos_idx: usize) -> &[f32] {
        let start = (layer_idx * self.positions.len() + pos_idx) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn expected_len(&self) -> usize {
        self.layers.len() * self.positions.len() * self.dim
    }
}

/// Last-layer attention from one query position, `[head][prompt position]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionView {
    pub heads: usize,
    pub positions: usize,
    pub weights: Vec<f32>,
}

impl AttentionView {
    pub fn row(&self, head: usize) -> &[f32] {
        &self.weights[head * self.positions..(head + 1) * self.positions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.heads).map(move |h| self.row(h))
    }
}

/// Top-M token probabilities plus the mass left over for the rest of the
/// vocabulary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDistribution {
    pub top: Vec<(u32, f32)>,
    pub tail_mass: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationRecord {
    pub text: String,
    pub token_count: u32,
    /// Exact per-token entropies in nats; preferred when present.
    pub token_entropies: Option<Vec<f32>>,
    pub token_distributions: Option<Vec<SparseDistribution>>,
    pub embedding: Vec<f32>,
    pub seed: u64,
}

/// Per-option probabilities at each scoring position, for multiple choice.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptionScores {
    pub options: Vec<(String, Vec<f32>)>,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTrace {
    pub condition: ConditionId,
    pub prompt_token_count: u32,
    pub hidden: HiddenSlab,
    pub attention_prompt_last: AttentionView,
    pub attention_first_gen: AttentionView,
    pub visible_mask: Vec<bool>,
    pub keyword_positions: Vec<u32>,
    pub generations: Vec<GenerationRecord>,
    pub option_scores: Option<OptionScores>,
}

impl ConditionTrace {
    pub fn prompt_last_position(&self) -> u32 {
        self.prompt_token_count.saturating_sub(1)
    }

    /// The first generated token sits right after the prompt.
    pub fn first_gen_position(&self) -> u32 {
        self.prompt_token_count
    }
}

/// All condition traces of one instance, kept in canonical condition order.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTraces {
    pub instance_id: String,
    pub conditions: Vec<ConditionTrace>,
}

impl InstanceTraces {
    pub fn new(instance_id: String, mut conditions: Vec<ConditionTrace>) -> Self {
        conditions.sort_by_key(|c| c.condition);
        Self {
            instance_id,
            conditions,
        }
    }

    pub fn get(&self, condition: ConditionId) -> Option<&ConditionTrace> {
        self.conditions.iter().find(|c| c.condition == condition)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("incompatible shards: {0} differs")]
    IncompatibleShards(&'static str),
    #[error("duplicate instance `{0}`")]
    DuplicateInstance(String),
    #[error("no shards to merge")]
    NoShards,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub manifest: TraceManifest,
    pub instances: BTreeMap<String, InstanceTraces>,
}

impl TraceBundle {
    /// Builds a bundle whose manifest instance list is sorted by id.
    pub fn new(mut manifest: TraceManifest, instances: Vec<InstanceTraces>) -> Self {
        manifest.instances.sort_by(|a, b| a.id.cmp(&b.id));
        let instances = instances
            .into_iter()
            .map(|i| (i.instance_id.clone(), i))
            .collect();
        Self {
            manifest,
            instances,
        }
    }

    /// Union of shards sharing one header. Instance order in the result is
    /// by id, so the outcome does not depend on the order of `shards`.
    pub fn merge(shards: Vec<TraceBundle>) -> Result<TraceBundle, TraceError> {
        let mut iter = shards.into_iter();
        let mut merged = iter.next().ok_or(TraceError::NoShards)?;
        let rest: Vec<TraceBundle> = iter.collect();
        for shard in &rest {
            if let Some(field) = merged.manifest.header_mismatch(&shard.manifest) {
                return Err(TraceError::IncompatibleShards(field));
            }
        }
        for shard in rest {
            for entry in shard.manifest.instances {
                if merged.manifest.instance(&entry.id).is_some() {
                    return Err(TraceError::DuplicateInstance(entry.id));
                }
                merged.manifest.instances.push(entry);
            }
            for (id, inst) in shard.instances {
                if merged.instances.insert(id.clone(), inst).is_some() {
                    return Err(TraceError::DuplicateInstance(id));
                }
            }
        }
        merged.manifest.instances.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(merged)
    }

    /// Instances present under both conditions, in id order.
    pub fn paired(
        &self,
        condition: ConditionId,
        baseline: ConditionId,
    ) -> impl Iterator<Item = (&str, &ConditionTrace, &ConditionTrace)> {
        self.instances.values().filter_map(move |inst| {
            Some((
                inst.instance_id.as_str(),
                inst.get(condition)?,
                inst.get(baseline)?,
            ))
        })
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = &str> {
        self.instances.keys().map(String::as_str)
    }

    pub fn domain_of(&self, id: &str) -> Option<DomainId> {
        self.manifest.instance(id).map(|e| e.domain)
    }

    /// Sub-bundle holding only instances assigned to `shard`.
    pub fn shard(&self, shard: u32) -> TraceBundle {
        let mut manifest = self.manifest.clone();
        manifest.instances.retain(|e| e.shard == shard);
        let instances = self
            .instances
            .iter()
            .filter(|(id, _)| manifest.instance(id).is_some())
            .map(|(id, inst)| (id.clone(), inst.clone()))
            .collect();
        TraceBundle {
            manifest,
            instances,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{} ({} instances, L={}, d={}, K={})",
            self.manifest.model_id,
            self.instances.len(),
            self.manifest.num_layers,
            self.manifest.hidden_dim,
            self.manifest.decoding.k
        )
    }
}
