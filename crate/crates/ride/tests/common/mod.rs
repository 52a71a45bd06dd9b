#![allow(dead_code)]

use std::collections::BTreeMap;

use ride::synth::{ConditionEffect, SegmentDeltas, SynthSpec};
use ride_core::ConditionId;

/// Small five-condition spec with a planted early densification.
pub fn tiny_spec(n: usize, seed: u64) -> SynthSpec {
    let mut conditions = BTreeMap::new();
    for c in ConditionId::ALL {
        conditions.insert(c, ConditionEffect::default());
    }
    conditions.insert(
        ConditionId::TagCorrect,
        ConditionEffect {
            hoyer_delta: SegmentDeltas {
                early: -0.015,
                middle: -0.01,
                late: -0.005,
            },
            keyword_shift: -0.04,
            entropy_rho: 0.3,
            ..ConditionEffect::default()
        },
    );
    conditions.insert(
        ConditionId::InstrExpert,
        ConditionEffect {
            keyword_shift: 0.016,
            ..ConditionEffect::default()
        },
    );
    SynthSpec {
        model_id: "tiny".into(),
        n_instances: n,
        num_layers: 3,
        hidden_dim: 16,
        heads: 2,
        k: 3,
        prompt_tokens: [3, 5],
        gen_tokens: [2, 4],
        embedding_dim: 4,
        shards: 1,
        seed,
        missing_keyword_rate: 0.1,
        vocab_size: Some(1000),
        base_hoyer: 0.3,
        base_hoyer_sd: 0.02,
        conditions,
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
