//! Invariant checks over a whole bundle. Violations are data: validation
//! never stops at the first problem.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::condition::ConditionId;
use crate::trace::{AttentionView, ConditionTrace, GenerationRecord, TraceBundle, TraceManifest};

/// Slack on attention rows before renormalization.
pub const ATTENTION_ROW_TOLERANCE: f64 = 1e-4;
/// Slack on sparse distribution mass.
pub const DISTRIBUTION_MASS_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub instance: Option<String>,
    pub condition: Option<ConditionId>,
    pub rule: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

struct Sink<'a> {
    out: &'a mut Vec<Violation>,
    instance: Option<&'a str>,
    condition: Option<ConditionId>,
}

impl Sink<'_> {
    fn push(&mut self, rule: &str, detail: String) {
        self.out.push(Violation {
            instance: self.instance.map(ToString::to_string),
            condition: self.condition,
            rule: rule.to_string(),
            detail,
        });
    }
}

pub fn validate_bundle(bundle: &TraceBundle) -> ValidationReport {
    let mut violations = Vec::new();
    let m = &bundle.manifest;
    validate_manifest(
        m,
        &mut Sink {
            out: &mut violations,
            instance: None,
            condition: None,
        },
    );

    for entry in &m.instances {
        if !bundle.instances.contains_key(&entry.id) {
            Sink {
                out: &mut violations,
                instance: Some(&entry.id),
                condition: None,
            }
            .push(
                "instance listing",
                "listed in manifest but has no traces".into(),
            );
        }
    }
    for (id, inst) in &bundle.instances {
        let mut sink = Sink {
            out: &mut violations,
            instance: Some(id),
            condition: None,
        };
        if m.instance(id).is_none() {
            sink.push(
                "instance listing",
                "traces present but not listed in manifest".into(),
            );
        }
        for w in inst.conditions.windows(2) {
            if w[0].condition == w[1].condition {
                sink.push("condition set", format!("{} appears twice", w[0].condition));
            }
        }
        for trace in &inst.conditions {
            let mut sink = Sink {
                out: &mut violations,
                instance: Some(id),
                condition: Some(trace.condition),
            };
            validate_trace(trace, m, &mut sink);
        }
    }
    ValidationReport { violations }
}

fn validate_manifest(m: &TraceManifest, sink: &mut Sink<'_>) {
    if m.schema_version != crate::trace::SCHEMA_VERSION {
        sink.push("schema version", format!("{}", m.schema_version));
    }
    if m.num_layers < 3 {
        sink.push("num layers", format!("L = {} is below 3", m.num_layers));
    }
    if m.hidden_dim < 2 {
        sink.push("hidden dim", format!("d = {} is below 2", m.hidden_dim));
    }
    if m.decoding.k < 2 {
        sink.push("sample count", format!("K = {} is below 2", m.decoding.k));
    }
    if m.seed_list.len() != m.decoding.k as usize {
        sink.push(
            "seed list",
            format!("{} seeds for K = {}", m.seed_list.len(), m.decoding.k),
        );
    }
    let mut conds = m.conditions.clone();
    conds.sort();
    conds.dedup();
    if conds.len() != m.conditions.len() || conds.is_empty() {
        sink.push("condition set", "conditions empty or repeated".into());
    }
    let mut ids: Vec<&str> = m.instances.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    for w in ids.windows(2) {
        if w[0] == w[1] {
            sink.push(
                "instance shard",
                format!("`{}` assigned more than once", w[0]),
            );
        }
    }
}

fn validate_trace(t: &ConditionTrace, m: &TraceManifest, sink: &mut Sink<'_>) {
    if !m.conditions.contains(&t.condition) {
        sink.push("condition set", "condition not declared in manifest".into());
    }
    let p = t.prompt_token_count as usize;
    if p == 0 {
        sink.push("prompt length", "no prompt tokens".into());
    }
    validate_hidden(t, m, sink);
    validate_attention(t, sink);
    if t.visible_mask.len() != p {
        sink.push(
            "visible mask",
            format!("length {} for {} prompt tokens", t.visible_mask.len(), p),
        );
    }
    let mut prev: Option<u32> = None;
    for &k in &t.keyword_positions {
        if prev.is_some_and(|q| q >= k) {
            sink.push("keyword positions", "not strictly increasing".into());
        }
        prev = Some(k);
        if !t.visible_mask.get(k as usize).copied().unwrap_or(false) {
            sink.push(
                "keyword positions",
                format!("position {k} is not a visible prompt token"),
            );
        }
    }
    if t.generations.len() != m.decoding.k as usize {
        sink.push(
            "generation count",
            format!("{} generations, K = {}", t.generations.len(), m.decoding.k),
        );
    }
    let emb_dim = t.generations.first().map(|g| g.embedding.len());
    for (i, g) in t.generations.iter().enumerate() {
        validate_generation(i, g, m, sink);
        if Some(g.embedding.len()) != emb_dim {
            sink.push(
                "embedding dim",
                format!("generation {i} differs from generation 0"),
            );
        }
    }
    if let Some(o) = &t.option_scores {
        let positions = o.options.first().map(|(_, v)| v.len()).unwrap_or(0);
        if o.options.len() < 2 {
            sink.push("option scores", "fewer than two options".into());
        }
        if !o.options.iter().any(|(name, _)| *name == o.gold) {
            sink.push(
                "option scores",
                format!("gold option `{}` not listed", o.gold),
            );
        }
        if positions == 0 || o.options.iter().any(|(_, v)| v.len() != positions) {
            sink.push("option scores", "scoring positions empty or ragged".into());
        }
        if o.options
            .iter()
            .flat_map(|(_, v)| v)
            .any(|&x| !(0.0..=1.0).contains(&x))
        {
            sink.push("option scores", "probability outside [0, 1]".into());
        }
    }
}

fn validate_hidden(t: &ConditionTrace, m: &TraceManifest, sink: &mut Sink<'_>) {
    let h = &t.hidden;
    if h.dim != m.hidden_dim as usize {
        sink.push(
            "hidden dim",
            format!("slab dim {} vs manifest {}", h.dim, m.hidden_dim),
        );
    }
    if h.data.len() != h.expected_len() {
        sink.push(
            "hidden shape",
            format!("{} values, expected {}", h.data.len(), h.expected_len()),
        );
        return;
    }
    if !h.layers.windows(2).all(|w| w[0] < w[1]) {
        sink.push(
            "hidden layers",
            "layer index not strictly increasing".into(),
        );
    }
    if h.layers.iter().any(|&l| l == 0 || l > m.num_layers) {
        sink.push(
            "hidden layers",
            format!("layer index outside [1, {}]", m.num_layers),
        );
    }
    if (1..=m.num_layers).any(|l| h.layer_index(l).is_none()) {
        sink.push("hidden layers", "not every layer sampled".into());
    }
    if !h.positions.windows(2).all(|w| w[0] < w[1]) {
        sink.push(
            "hidden positions",
            "position index not strictly increasing".into(),
        );
    }
    let needed = t.prompt_token_count;
    if (0..=needed).any(|pos| h.position_index(pos).is_none()) {
        sink.push(
            "hidden positions",
            "prompt tokens and the first generated token must all be sampled".into(),
        );
    }
    if h.data.iter().any(|v| !v.is_finite()) {
        sink.push("hidden values", "non-finite value".into());
    }
}

fn validate_attention(t: &ConditionTrace, sink: &mut Sink<'_>) {
    let p = t.prompt_token_count as usize;
    for (name, view) in [
        ("prompt_last", &t.attention_prompt_last),
        ("first_gen", &t.attention_first_gen),
    ] {
        if !attention_shape_ok(view, p) {
            sink.push(
                "attention shape",
                format!(
                    "{name}: {} heads x {} positions, {} weights",
                    view.heads,
                    view.positions,
                    view.weights.len()
                ),
            );
            continue;
        }
        if view.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            sink.push(
                "attention weight",
                format!("{name}: negative or non-finite weight"),
            );
        }
        for (head, row) in view.rows().enumerate() {
            let s: f64 = row.iter().map(|&w| w as f64).sum();
            if s > 1.0 + ATTENTION_ROW_TOLERANCE {
                sink.push("attention row sum", format!("{name} head {head}: {s}"));
            }
        }
        if t.visible_mask.len() == p {
            let visible: f64 = view
                .rows()
                .flat_map(|row| row.iter().zip(&t.visible_mask))
                .filter(|(_, &v)| v)
                .map(|(&w, _)| w as f64)
                .sum();
            if !(visible > 0.0) {
                sink.push(
                    "visible attention mass",
                    format!("{name}: no mass on visible tokens"),
                );
            }
        }
    }
}

fn attention_shape_ok(view: &AttentionView, p: usize) -> bool {
    view.heads >= 1 && view.positions as usize == p && view.weights.len() == view.heads as usize * p
}

fn validate_generation(i: usize, g: &GenerationRecord, m: &TraceManifest, sink: &mut Sink<'_>) {
    let t = g.token_count as usize;
    if t == 0 {
        sink.push("token count", format!("generation {i} is empty"));
    }
    if m.seed_list.get(i).is_some_and(|&s| s != g.seed) {
        sink.push(
            "generation seed",
            format!("generation {i} seed {} not in seed list order", g.seed),
        );
    }
    if g.token_entropies.is_none() && g.token_distributions.is_none() {
        sink.push(
            "entropy data",
            format!("generation {i} has neither entropies nor distributions"),
        );
    }
    if let Some(h) = &g.token_entropies {
        if h.len() != t {
            sink.push(
                "entropy data",
                format!("generation {i}: {} entropies for {t} tokens", h.len()),
            );
        }
        if h.iter().any(|x| !x.is_finite() || *x < 0.0) {
            sink.push(
                "entropy data",
                format!("generation {i}: negative or non-finite entropy"),
            );
        }
    }
    if let Some(dists) = &g.token_distributions {
        if dists.len() != t {
            sink.push(
                "entropy data",
                format!(
                    "generation {i}: {} distributions for {t} tokens",
                    dists.len()
                ),
            );
        }
        for (j, d) in dists.iter().enumerate() {
            let bad_prob = d.top.iter().any(|(_, p)| !p.is_finite() || *p < 0.0)
                || !d.tail_mass.is_finite()
                || d.tail_mass < 0.0;
            let mass: f64 = d.top.iter().map(|&(_, p)| p as f64).sum::<f64>() + d.tail_mass as f64;
            if bad_prob || (mass - 1.0).abs() > DISTRIBUTION_MASS_TOLERANCE {
                sink.push(
                    "distribution mass",
                    format!("generation {i} token {j}: mass {mass}"),
                );
            }
            if d.tail_mass > 0.0 && g.token_entropies.is_none() {
                let ok = m.vocab_size.is_some_and(|v| v > d.top.len() as u64);
                if !ok {
                    sink.push(
                        "vocab size",
                        format!("generation {i} token {j}: tail mass needs a vocabulary larger than its top list"),
                    );
                }
            }
        }
    }
    let norm2: f64 = g.embedding.iter().map(|&x| (x as f64) * (x as f64)).sum();
    if !(norm2 > 0.0) || !norm2.is_finite() {
        sink.push(
            "embedding norm",
            format!("generation {i}: zero or non-finite norm"),
        );
    }
}
