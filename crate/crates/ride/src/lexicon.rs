//! JSON loaders for the keyword lexicon (`{domain: [keyword, ...]}`) and the
//! expert templates (`{domain: text}`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ride_core::prompt::PromptError;
use ride_core::{DomainId, KeywordLexicon, TemplateSet};

pub const DEFAULT_LEXICON_JSON: &str = include_str!("../data/lexicon.default.json");
pub const DEFAULT_TEMPLATES_JSON: &str = include_str!("../data/templates.en.json");

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] PromptError),
}

fn parse_domain_map<T: serde::de::DeserializeOwned>(
    text: &str,
) -> Result<BTreeMap<DomainId, T>, LexiconError> {
    let raw: BTreeMap<String, T> = serde_json::from_str(text)?;
    let mut out = BTreeMap::new();
    for (key, value) in raw {
        out.insert(key.parse::<DomainId>()?, value);
    }
    Ok(out)
}

pub fn parse_lexicon(text: &str, provenance: &str) -> Result<KeywordLexicon, LexiconError> {
    let raw = parse_domain_map::<Vec<String>>(text)?;
    Ok(KeywordLexicon::from_entries(raw, provenance)?)
}

pub fn parse_templates(text: &str) -> Result<TemplateSet, LexiconError> {
    Ok(TemplateSet::new(parse_domain_map::<String>(text)?)?)
}

fn read(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a lexicon file; its provenance note is the file name.
pub fn load_lexicon(path: &Path) -> Result<KeywordLexicon, LexiconError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_lexicon(&read(path)?, &name)
}

pub fn load_templates(path: &Path) -> Result<TemplateSet, LexiconError> {
    parse_templates(&read(path)?)
}

pub fn default_lexicon() -> KeywordLexicon {
    parse_lexicon(DEFAULT_LEXICON_JSON, "lexicon.default.json").expect("shipped lexicon is valid")
}

pub fn default_templates() -> TemplateSet {
    parse_templates(DEFAULT_TEMPLATES_JSON).expect("shipped templates are valid")
}
