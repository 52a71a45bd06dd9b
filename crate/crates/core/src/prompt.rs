//! Prefix conditions, route-tag sampling and the domain keyword lexicon.
//!
//! A prefix is rendered per (condition, instance domain) and injected before
//! the user prompt, separated by a single newline. Wrong tags and placebo
//! payloads are drawn from a ChaCha8 stream seeded per instance, so the same
//! seed always yields the same prefix on every platform.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionId;

/// Route-tag domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainId {
    Math,
    Code,
    Format,
    Commonsense,
}

impl DomainId {
    pub const ALL: [DomainId; 4] = [
        DomainId::Math,
        DomainId::Code,
        DomainId::Format,
        DomainId::Commonsense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainId::Math => "math",
            DomainId::Code => "code",
            DomainId::Format => "format",
            DomainId::Commonsense => "commonsense",
        }
    }

    /// Maps an items-table analysis domain onto its tag domain. The items
    /// table uses `math`, `ifeval` and `commonsense`; `code` only ever shows
    /// up as a wrong tag.
    pub fn from_analysis_domain(name: &str) -> Result<Self, PromptError> {
        match name {
            "ifeval" => Ok(DomainId::Format),
            other => other.parse(),
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| PromptError::UnknownDomain(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("missing template for domain `{0}`")]
    MissingTemplate(DomainId),
    #[error("condition `{0}` needs a seed")]
    MissingSeed(ConditionId),
    #[error("cannot satisfy placebo constraint")]
    PlaceboUnsatisfiable,
    #[error("empty domain list: `{0}`")]
    EmptyDomain(String),
    #[error("lexicon rejected: {0}")]
    LexiconRejected(String),
}

/// Fixed expert-instruction template per domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    templates: BTreeMap<DomainId, String>,
}

impl TemplateSet {
    /// Requires exactly one template for each of the four domains.
    pub fn new(templates: BTreeMap<DomainId, String>) -> Result<Self, PromptError> {
        for d in DomainId::ALL {
            if templates.get(&d).map_or(true, |t| t.trim().is_empty()) {
                return Err(PromptError::MissingTemplate(d));
            }
        }
        Ok(Self { templates })
    }

    /// English templates used in the main runs.
    pub fn english_default() -> Self {
        let templates = [
            (
                DomainId::Math,
                "You are a Math Expert. Please solve the problem step by step.",
            ),
            (DomainId::Code, "You are a coding assistant."),
            (
                DomainId::Format,
                "You are a formatting assistant. Please strictly follow the required output format.",
            ),
            (
                DomainId::Commonsense,
                "You are a reasoning assistant. Please choose the most plausible option and briefly explain why.",
            ),
        ]
        .into_iter()
        .map(|(d, t)| (d, t.to_string()))
        .collect();
        Self { templates }
    }

    /// The default set with the Chinese math instruction swapped in.
    pub fn chinese_math_variant() -> Self {
        let mut set = Self::english_default();
        set.templates.insert(
            DomainId::Math,
            "你是一名数学专家，请逐步推理并给出答案。".to_string(),
        );
        set
    }

    pub fn get(&self, domain: DomainId) -> Result<&str, PromptError> {
        self.templates
            .get(&domain)
            .map(String::as_str)
            .ok_or(PromptError::MissingTemplate(domain))
    }
}

/// A rendered prefix for one instance under one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixCondition {
    pub kind: ConditionId,
    pub rendered_text: String,
    pub domain_used: Option<DomainId>,
    pub seed: Option<u64>,
}

impl PrefixCondition {
    /// Full user turn: prefix, newline, user prompt. Control is the prompt alone.
    pub fn assemble(&self, user_prompt: &str) -> String {
        if self.rendered_text.is_empty() {
            return user_prompt.to_string();
        }
        let mut out = String::with_capacity(self.rendered_text.len() + 1 + user_prompt.len());
        out.push_str(&self.rendered_text);
        out.push('\n');
        out.push_str(user_prompt);
        out
    }
}

pub fn route_tag(payload: &str) -> String {
    let mut s = String::with_capacity(10 + payload.len() + 1);
    s.push_str("[RouteTag=");
    s.push_str(payload);
    s.push(']');
    s
}

/// Renders the prefix for `kind` on an instance of `domain`.
///
/// `seed` is required for `tag_wrong` and `tag_placebo` and recorded on the
/// result; other kinds ignore it.
pub fn render_prefix(
    kind: ConditionId,
    domain: DomainId,
    templates: &TemplateSet,
    seed: Option<u64>,
) -> Result<PrefixCondition, PromptError> {
    let (rendered_text, domain_used, seed) = match kind {
        ConditionId::Control => (String::new(), None, None),
        ConditionId::TagCorrect => (route_tag(domain.as_str()), Some(domain), None),
        ConditionId::TagWrong => {
            let seed = seed.ok_or(PromptError::MissingSeed(kind))?;
            let wrong = sample_wrong_tag(domain, seed);
            (route_tag(wrong.as_str()), Some(wrong), Some(seed))
        }
        ConditionId::TagPlacebo => {
            let seed = seed.ok_or(PromptError::MissingSeed(kind))?;
            let tag = make_placebo_tag(domain.as_str().len(), seed, PLACEBO_ALPHABET)?;
            (tag, None, Some(seed))
        }
        ConditionId::InstrExpert => (templates.get(domain)?.to_string(), Some(domain), None),
    };
    Ok(PrefixCondition {
        kind,
        rendered_text,
        domain_used,
        seed,
    })
}

/// All five prefixes for one instance, in canonical condition order.
pub fn render_conditions(
    domain: DomainId,
    templates: &TemplateSet,
    seed: u64,
) -> Result<Vec<PrefixCondition>, PromptError> {
    ConditionId::ALL
        .iter()
        .map(|&kind| render_prefix(kind, domain, templates, Some(seed)))
        .collect()
}

/// Draws uniformly among the three domains other than `domain`.
pub fn sample_wrong_tag(domain: DomainId, seed: u64) -> DomainId {
    let others: Vec<DomainId> = DomainId::ALL.into_iter().filter(|&d| d != domain).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    others[rng.gen_range(0u32..others.len() as u32) as usize]
}

pub const PLACEBO_ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

const PLACEBO_MAX_ATTEMPTS: usize = 64;

/// `[RouteTag=<payload>]` with a seeded random payload that never contains a
/// domain name (case-insensitive).
pub fn make_placebo_tag(length: usize, seed: u64, alphabet: &str) -> Result<String, PromptError> {
    let symbols: Vec<char> = alphabet.chars().collect();
    if symbols.is_empty() {
        return Err(PromptError::PlaceboUnsatisfiable);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PLACEBO_MAX_ATTEMPTS {
        let payload: String = (0..length)
            .map(|_| symbols[rng.gen_range(0u32..symbols.len() as u32) as usize])
            .collect();
        let lowered = payload.to_lowercase();
        if !DomainId::ALL.iter().any(|d| lowered.contains(d.as_str())) {
            return Ok(route_tag(&payload));
        }
    }
    Err(PromptError::PlaceboUnsatisfiable)
}

/// Built-in stoplist applied when loading a lexicon.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but",
    "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her",
    "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "me", "my", "no", "not", "of",
    "on", "or", "our", "she", "so", "than", "that", "the", "their", "them", "then", "there",
    "these", "they", "this", "those", "to", "too", "us", "was", "we", "were", "what", "when",
    "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

/// Domain keyword lists plus a provenance note per domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordLexicon {
    entries: BTreeMap<DomainId, Vec<String>>,
    provenance: BTreeMap<DomainId, String>,
}

impl KeywordLexicon {
    /// Validates and lowercases entries. Every domain must be present and
    /// non-empty; stopwords, punctuation-only, whitespace-bearing and
    /// duplicate entries are rejected.
    pub fn from_entries(
        raw: BTreeMap<DomainId, Vec<String>>,
        provenance: &str,
    ) -> Result<Self, PromptError> {
        let mut entries = BTreeMap::new();
        for d in DomainId::ALL {
            let list = match raw.get(&d) {
                Some(list) if !list.is_empty() => list,
                _ => return Err(PromptError::EmptyDomain(d.as_str().into())),
            };
            let mut seen = BTreeSet::new();
            let mut clean = Vec::with_capacity(list.len());
            for entry in list {
                let lowered = entry.trim().to_lowercase();
                let rejected = lowered.is_empty()
                    || STOPWORDS.contains(&lowered.as_str())
                    || !lowered.chars().any(char::is_alphanumeric)
                    || lowered.chars().any(char::is_whitespace)
                    || !seen.insert(lowered.clone());
                if rejected {
                    return Err(PromptError::LexiconRejected(entry.clone()));
                }
                clean.push(lowered);
            }
            entries.insert(d, clean);
        }
        let provenance = DomainId::ALL
            .iter()
            .map(|&d| (d, provenance.to_string()))
            .collect();
        Ok(Self {
            entries,
            provenance,
        })
    }

    /// The hand-curated seed keywords.
    pub fn seed_default() -> Self {
        let raw = [
            (
                DomainId::Math,
                ["equation", "integer", "sum", "proof", "factor"],
            ),
            (
                DomainId::Code,
                ["function", "variable", "class", "compile", "error"],
            ),
            (
                DomainId::Format,
                ["json", "table", "markdown", "field", "column"],
            ),
            (
                DomainId::Commonsense,
                ["choose", "option", "likely", "most", "best"],
            ),
        ]
        .into_iter()
        .map(|(d, words)| (d, words.iter().map(|w| w.to_string()).collect()))
        .collect();
        Self::from_entries(raw, "seed keywords").expect("seed lexicon is valid")
    }

    pub fn keywords(&self, domain: DomainId) -> &[String] {
        self.entries.get(&domain).map_or(&[], Vec::as_slice)
    }

    pub fn provenance(&self, domain: DomainId) -> Option<&str> {
        self.provenance.get(&domain).map(String::as_str)
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        self.entries.keys().copied()
    }
}

const SPACE_MARKERS: &[char] = &[' ', '\t', '\u{0120}', '\u{2581}'];

/// Lowercase, drop leading tokenizer space markers (`Ġ`, `▁`, blanks) and a
/// single trailing `s` on words longer than three characters.
pub fn normalize_token(token: &str) -> String {
    let mut s = token.trim_start_matches(SPACE_MARKERS).to_lowercase();
    if s.chars().count() > 3 && s.ends_with('s') {
        s.pop();
    }
    s
}

/// Positions of prompt tokens matching a keyword of `domain`.
pub fn match_keywords<S: AsRef<str>>(
    tokens: &[S],
    lexicon: &KeywordLexicon,
    domain: DomainId,
) -> Vec<usize> {
    let targets: BTreeSet<String> = lexicon
        .keywords(domain)
        .iter()
        .map(|k| normalize_token(k))
        .collect();
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            let n = normalize_token(t.as_ref());
            !n.is_empty() && targets.contains(&n)
        })
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tag_correct_renders_route_tag() {
        let t = TemplateSet::english_default();
        let p = render_prefix(ConditionId::TagCorrect, DomainId::Math, &t, None).unwrap();
        assert_eq!(p.rendered_text, "[RouteTag=math]");
        assert_eq!(p.domain_used, Some(DomainId::Math));
    }

    #[test]
    fn control_renders_nothing() {
        let t = TemplateSet::english_default();
        let p = render_prefix(ConditionId::Control, DomainId::Math, &t, Some(3)).unwrap();
        assert_eq!(p.rendered_text, "");
        assert_eq!(p.assemble("What is 2+2?"), "What is 2+2?");
    }

    #[test]
    fn expert_uses_template_verbatim() {
        let t = TemplateSet::english_default();
        let p = render_prefix(ConditionId::InstrExpert, DomainId::Math, &t, None).unwrap();
        assert_eq!(
            p.rendered_text,
            "You are a Math Expert. Please solve the problem step by step."
        );
        assert_eq!(
            p.assemble("Q"),
            "You are a Math Expert. Please solve the problem step by step.\nQ"
        );
    }

    #[test]
    fn missing_template_is_rejected() {
        let mut m = BTreeMap::new();
        m.insert(DomainId::Math, "x".to_string());
        assert_eq!(
            TemplateSet::new(m).unwrap_err(),
            PromptError::MissingTemplate(DomainId::Code)
        );
    }

    #[test]
    fn unknown_domain_is_an_error() {
        assert!(matches!(
            "biology".parse::<DomainId>(),
            Err(PromptError::UnknownDomain(_))
        ));
        assert_eq!(
            DomainId::from_analysis_domain("ifeval").unwrap(),
            DomainId::Format
        );
    }

    #[test]
    fn seeded_kinds_require_a_seed() {
        let t = TemplateSet::english_default();
        assert_eq!(
            render_prefix(ConditionId::TagWrong, DomainId::Math, &t, None).unwrap_err(),
            PromptError::MissingSeed(ConditionId::TagWrong)
        );
    }

    #[test]
    fn wrong_tag_is_stable_and_never_the_input() {
        for seed in 0..200 {
            let a = sample_wrong_tag(DomainId::Code, seed);
            assert_eq!(a, sample_wrong_tag(DomainId::Code, seed));
            assert_ne!(a, DomainId::Code);
        }
    }

    #[test]
    fn wrong_tag_frequencies_are_uniform() {
        let mut counts = BTreeMap::new();
        for seed in 0..30_000u64 {
            *counts
                .entry(sample_wrong_tag(DomainId::Math, seed))
                .or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 3);
        for d in [DomainId::Code, DomainId::Format, DomainId::Commonsense] {
            let c = counts[&d];
            assert!((9_700..=10_300).contains(&c), "{d}: {c}");
        }
    }

    #[test]
    fn placebo_matches_pattern_and_is_deterministic() {
        for seed in 0..50 {
            let tag = make_placebo_tag(5, seed, PLACEBO_ALPHABET).unwrap();
            assert_eq!(tag, make_placebo_tag(5, seed, PLACEBO_ALPHABET).unwrap());
            let payload = tag
                .strip_prefix("[RouteTag=")
                .and_then(|s| s.strip_suffix(']'))
                .unwrap();
            assert_eq!(payload.len(), 5);
            assert!(payload.chars().all(|c| c.is_ascii_uppercase()));
        }
    }

    #[test]
    fn placebo_never_spells_a_domain() {
        for seed in 0..10_000 {
            let tag = make_placebo_tag(4, seed, PLACEBO_ALPHABET).unwrap();
            assert_ne!(tag.to_lowercase(), "[routetag=math]");
        }
    }

    #[test]
    fn placebo_with_empty_alphabet_errors() {
        assert_eq!(
            make_placebo_tag(4, 1, ""),
            Err(PromptError::PlaceboUnsatisfiable)
        );
    }

    #[test]
    fn placebo_prefix_mirrors_correct_tag_shape() {
        let t = TemplateSet::english_default();
        for d in DomainId::ALL {
            let real = render_prefix(ConditionId::TagCorrect, d, &t, None).unwrap();
            let fake = render_prefix(ConditionId::TagPlacebo, d, &t, Some(11)).unwrap();
            assert_eq!(real.rendered_text.len(), fake.rendered_text.len());
            assert!(fake.rendered_text.starts_with("[RouteTag="));
        }
    }

    #[test]
    fn conditions_share_the_user_prompt_bytes() {
        let t = TemplateSet::english_default();
        let user = "Solve x^2 = 4.\nGive both roots.";
        for d in DomainId::ALL {
            for p in render_conditions(d, &t, 99).unwrap() {
                let full = p.assemble(user);
                assert!(full.ends_with(user));
                let prefix_len = full.len() - user.len();
                if p.kind == ConditionId::Control {
                    assert_eq!(prefix_len, 0);
                } else {
                    assert_eq!(&full[..prefix_len], alloc::format!("{}\n", p.rendered_text));
                }
            }
        }
    }

    #[test]
    fn keyword_matching_examples() {
        let lex = KeywordLexicon::seed_default();
        assert_eq!(
            match_keywords(&["Solve", "the", "equation", "now"], &lex, DomainId::Math),
            vec![2]
        );
        assert!(match_keywords(&["hello", "world"], &lex, DomainId::Math).is_empty());
        assert_eq!(
            match_keywords(&["Equations"], &lex, DomainId::Math),
            vec![0]
        );
        assert_eq!(
            match_keywords(
                &["\u{0120}Sum", "\u{2581}proofs", "class"],
                &lex,
                DomainId::Math
            ),
            vec![0, 1]
        );
        assert_eq!(
            match_keywords(&["classes", "class"], &lex, DomainId::Code),
            vec![1]
        );
    }

    #[test]
    fn lexicon_validation() {
        let mut raw: BTreeMap<DomainId, Vec<String>> = DomainId::ALL
            .iter()
            .map(|&d| (d, vec!["alpha".to_string()]))
            .collect();
        assert!(KeywordLexicon::from_entries(raw.clone(), "t").is_ok());

        raw.get_mut(&DomainId::Math).unwrap().push("the".into());
        assert_eq!(
            KeywordLexicon::from_entries(raw.clone(), "t").unwrap_err(),
            PromptError::LexiconRejected("the".into())
        );
        raw.get_mut(&DomainId::Math).unwrap().pop();

        raw.get_mut(&DomainId::Math).unwrap().push("?!".into());
        assert!(KeywordLexicon::from_entries(raw.clone(), "t").is_err());
        raw.get_mut(&DomainId::Math).unwrap().pop();

        raw.get_mut(&DomainId::Math).unwrap().push("Alpha".into());
        assert!(KeywordLexicon::from_entries(raw.clone(), "t").is_err());
        raw.get_mut(&DomainId::Math).unwrap().pop();

        raw.remove(&DomainId::Format);
        assert_eq!(
            KeywordLexicon::from_entries(raw, "t").unwrap_err(),
            PromptError::EmptyDomain("format".into())
        );
    }

    #[test]
    fn seed_lexicon_covers_all_domains() {
        let lex = KeywordLexicon::seed_default();
        assert_eq!(lex.domains().count(), 4);
        assert_eq!(lex.keywords(DomainId::Format)[0], "json");
    }
}
