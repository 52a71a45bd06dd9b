//! C3: predictive entropy, semantic variation across samples, and the
//! multiple-choice confidence margin.

use alloc::vec::Vec;

use libm::{log, sqrt};
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::trace::{GenerationRecord, OptionScores, SparseDistribution};

/// Entropy in nats of a top-M distribution. Leftover `tail_mass` is spread
/// uniformly over `tail_vocab_count` tokens, which upper-bounds the true
/// entropy; with no tail the value is exact.
pub fn token_entropy(dist: &SparseDistribution, tail_vocab_count: u64) -> Result<f64, MetricError> {
    let mut h = 0.0f64;
    for &(_, p) in &dist.top {
        let p = f64::from(p);
        if !(p >= 0.0) || !p.is_finite() {
            return Err(MetricError::InvalidDistribution);
        }
        if p > 0.0 {
            h -= p * log(p);
        }
    }
    let tail = f64::from(dist.tail_mass);
    if !(tail >= 0.0) || !tail.is_finite() {
        return Err(MetricError::InvalidDistribution);
    }
    if tail > 0.0 {
        if tail_vocab_count == 0 {
            return Err(MetricError::InvalidDistribution);
        }
        h -= tail * log(tail / tail_vocab_count as f64);
    }
    Ok(h.max(0.0))
}

/// Mean token entropy of one generation.
pub fn generation_entropy(
    gen: &GenerationRecord,
    vocab_size: Option<u64>,
) -> Result<f64, MetricError> {
    let t = gen.token_count as usize;
    if t == 0 {
        return Err(MetricError::EmptyGeneration);
    }
    if let Some(ent) = &gen.token_entropies {
        if ent.len() != t {
            return Err(MetricError::LengthMismatch {
                expected: t,
                actual: ent.len(),
            });
        }
        let sum: f64 = ent.iter().map(|&e| f64::from(e)).sum();
        return Ok(sum / t as f64);
    }
    let dists = gen
        .token_distributions
        .as_ref()
        .ok_or(MetricError::MissingEntropyData)?;
    if dists.len() != t {
        return Err(MetricError::LengthMismatch {
            expected: t,
            actual: dists.len(),
        });
    }
    let mut sum = 0.0f64;
    for d in dists {
        let tail_count = match vocab_size {
            Some(v) => v.saturating_sub(d.top.len() as u64),
            None => 0,
        };
        sum += token_entropy(d, tail_count)?;
    }
    Ok(sum / t as f64)
}

/// Sequence-mean entropy averaged over the K generations.
pub fn instance_mean_entropy(
    generations: &[GenerationRecord],
    vocab_size: Option<u64>,
) -> Result<f64, MetricError> {
    if generations.is_empty() {
        return Err(MetricError::TooFewSamples {
            needed: 1,
            actual: 0,
        });
    }
    let mut sum = 0.0f64;
    for g in generations {
        sum += generation_entropy(g, vocab_size)?;
    }
    Ok(sum / generations.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticVariation {
    /// Mean pairwise cosine similarity.
    pub mf1: f64,
    /// `1 − mf1`.
    pub var: f64,
}

/// Mean pairwise cosine over the K(K−1)/2 unordered pairs of embeddings.
pub fn semantic_variation<E: AsRef<[f32]>>(
    embeddings: &[E],
) -> Result<SemanticVariation, MetricError> {
    let k = embeddings.len();
    if k < 2 {
        return Err(MetricError::TooFewSamples {
            needed: 2,
            actual: k,
        });
    }
    let dim = embeddings[0].as_ref().len();
    let mut norms = Vec::with_capacity(k);
    for e in embeddings {
        let e = e.as_ref();
        if e.len() != dim {
            return Err(MetricError::LengthMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        let n = sqrt(e.iter().map(|&x| f64::from(x) * f64::from(x)).sum());
        if !(n > 0.0) || !n.is_finite() {
            return Err(MetricError::DegenerateEmbedding);
        }
        norms.push(n);
    }
    let mut sum = 0.0f64;
    let mut pairs = 0usize;
    for a in 0..k {
        for b in a + 1..k {
            let dot: f64 = embeddings[a]
                .as_ref()
                .iter()
                .zip(embeddings[b].as_ref())
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum();
            sum += (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            pairs += 1;
        }
    }
    let mf1 = sum / pairs as f64;
    Ok(SemanticVariation {
        mf1,
        var: 1.0 - mf1,
    })
}

/// `p̄(gold) − max_{c≠gold} p̄(c)` with `p̄` the mean over scoring positions.
pub fn confidence_margin(scores: &OptionScores) -> Result<f64, MetricError> {
    let gold_idx = scores
        .options
        .iter()
        .position(|(id, _)| *id == scores.gold)
        .ok_or_else(|| MetricError::UnknownGoldOption(scores.gold.clone()))?;
    if scores.options.len() < 2 {
        return Err(MetricError::TooFewSamples {
            needed: 2,
            actual: scores.options.len(),
        });
    }
    let g = scores.options[0].1.len();
    if g == 0 {
        return Err(MetricError::TooFewSamples {
            needed: 1,
            actual: 0,
        });
    }
    let mut means = Vec::with_capacity(scores.options.len());
    for (_, probs) in &scores.options {
        if probs.len() != g {
            return Err(MetricError::LengthMismatch {
                expected: g,
                actual: probs.len(),
            });
        }
        means.push(probs.iter().map(|&p| f64::from(p)).sum::<f64>() / g as f64);
    }
    let best_other = means
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != gold_idx)
        .map(|(_, &m)| m)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(means[gold_idx] - best_other)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C3Row {
    pub mean_entropy: f64,
    pub semantic_mf1: f64,
    pub semantic_var: f64,
    pub confidence_margin: Option<f64>,
}

pub fn c3_row(
    generations: &[GenerationRecord],
    options: Option<&OptionScores>,
    vocab_size: Option<u64>,
) -> Result<C3Row, MetricError> {
    let mean_entropy = instance_mean_entropy(generations, vocab_size)?;
    let embeddings: Vec<&[f32]> = generations.iter().map(|g| g.embedding.as_slice()).collect();
    let sv = semantic_variation(&embeddings)?;
    let confidence_margin = options.map(confidence_margin).transpose()?;
    Ok(C3Row {
        mean_entropy,
        semantic_mf1: sv.mf1,
        semantic_var: sv.var,
        confidence_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn dist(ps: &[f32], tail: f32) -> SparseDistribution {
        SparseDistribution {
            top: ps.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect(),
            tail_mass: tail,
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(token_entropy(&dist(&[1.0], 0.0), 0).unwrap(), 0.0);
        let u = token_entropy(&dist(&[0.25; 4], 0.0), 0).unwrap();
        assert!((u - 1.386_294_361_119_890_6).abs() < 1e-9);
        let h = token_entropy(&dist(&[0.5, 0.25, 0.25], 0.0), 0).unwrap();
        assert!((h - 1.039_720_770_839_917_9).abs() < 1e-9);
        assert_eq!(
            token_entropy(&dist(&[-0.1, 1.1], 0.0), 0),
            Err(MetricError::InvalidDistribution)
        );
    }

    #[test]
    fn tail_is_spread_uniformly() {
        // 0.5 on one token, 0.5 spread over 4 more: entropy of (0.5, 0.125 x4)
        let h = token_entropy(&dist(&[0.5], 0.5), 4).unwrap();
        let expected = -(0.5f64 * log(0.5)) - 4.0 * 0.125 * log(0.125);
        assert!((h - expected).abs() < 1e-12);
        assert_eq!(
            token_entropy(&dist(&[0.5], 0.5), 0),
            Err(MetricError::InvalidDistribution)
        );
    }

    fn gen_with_entropies(e: &[f32]) -> GenerationRecord {
        GenerationRecord {
            text: "x".to_string(),
            token_count: e.len() as u32,
            token_entropies: Some(e.to_vec()),
            token_distributions: None,
            embedding: vec![1.0, 0.0],
            seed: 0,
        }
    }

    #[test]
    fn mean_entropy_examples() {
        assert_eq!(
            instance_mean_entropy(&[gen_with_entropies(&[0.0; 3])], None).unwrap(),
            0.0
        );
        let gens = [
            gen_with_entropies(&[1.0, 1.0]),
            gen_with_entropies(&[2.0, 2.0, 2.0]),
        ];
        assert!((instance_mean_entropy(&gens, None).unwrap() - 1.5).abs() < 1e-12);
        let mut empty = gen_with_entropies(&[]);
        empty.token_entropies = None;
        assert_eq!(
            instance_mean_entropy(&[empty], None),
            Err(MetricError::EmptyGeneration)
        );
    }

    #[test]
    fn precomputed_entropies_win_over_distributions() {
        let mut g = gen_with_entropies(&[0.7]);
        g.token_distributions = Some(vec![dist(&[0.25; 4], 0.0)]);
        assert!((generation_entropy(&g, None).unwrap() - 0.7f32 as f64).abs() < 1e-12);
        g.token_entropies = None;
        assert!((generation_entropy(&g, None).unwrap() - log(4.0)).abs() < 1e-9);
    }

    #[test]
    fn semantic_variation_examples() {
        let same = [[0.3f32, 0.4], [0.3, 0.4], [0.3, 0.4]];
        let s = semantic_variation(&same).unwrap();
        assert!((s.mf1 - 1.0).abs() < 1e-9 && s.var.abs() < 1e-9);

        let s = semantic_variation(&[[1.0f32, 0.0], [0.0, 2.0]]).unwrap();
        assert!(s.mf1.abs() < 1e-12 && (s.var - 1.0).abs() < 1e-12);

        // cos(e1,e2)=1, cos(e1,e3)=cos(e2,e3)=0.5
        let r3 = sqrt(3.0) as f32;
        let s = semantic_variation(&[[1.0f32, 0.0], [2.0, 0.0], [0.5, r3 / 2.0]]).unwrap();
        assert!((s.mf1 - 2.0 / 3.0).abs() < 1e-6);
        assert!((s.var - 1.0 / 3.0).abs() < 1e-6);

        assert_eq!(
            semantic_variation(&[[1.0f32, 0.0], [0.0, 0.0]]),
            Err(MetricError::DegenerateEmbedding)
        );
        assert!(semantic_variation(&[[1.0f32, 0.0]]).is_err());
    }

    fn scores(opts: &[(&str, &[f32])], gold: &str) -> OptionScores {
        OptionScores {
            options: opts
                .iter()
                .map(|(id, p)| (id.to_string(), p.to_vec()))
                .collect(),
            gold: gold.to_string(),
        }
    }

    #[test]
    fn confidence_margin_examples() {
        let s = scores(&[("A", &[0.6]), ("B", &[0.3]), ("C", &[0.1])], "A");
        assert!((confidence_margin(&s).unwrap() - 0.3).abs() < 1e-6);
        let s = scores(&[("A", &[0.5]), ("B", &[0.5])], "B");
        assert_eq!(confidence_margin(&s).unwrap(), 0.0);
        let s = scores(&[("A", &[0.5]), ("B", &[0.5])], "Z");
        assert_eq!(
            confidence_margin(&s),
            Err(MetricError::UnknownGoldOption("Z".into()))
        );
    }

    #[test]
    fn confidence_margin_matches_mean_then_max() {
        let opts: [(&str, &[f32]); 3] = [
            ("A", &[0.2, 0.4, 0.3]),
            ("B", &[0.5, 0.1, 0.3]),
            ("C", &[0.3, 0.5, 0.4]),
        ];
        // brute force: means A=0.3, B=0.3, C=0.4
        let mut means = [0.0f64; 3];
        for (i, (_, p)) in opts.iter().enumerate() {
            for &x in p.iter() {
                means[i] += f64::from(x);
            }
            means[i] /= 3.0;
        }
        let s = scores(&opts, "A");
        assert!(
            (confidence_margin(&s).unwrap() - (means[0] - means[1].max(means[2]))).abs() < 1e-12
        );
    }
}
