use ride::lexicon::{
    default_lexicon, default_templates, load_lexicon, parse_lexicon, parse_templates, LexiconError,
};
use ride_core::prompt::{match_keywords, PromptError};
use ride_core::{DomainId, KeywordLexicon, TemplateSet};

#[test]
fn shipped_files_match_the_built_in_defaults() {
    let lex = default_lexicon();
    let seed = KeywordLexicon::seed_default();
    for d in DomainId::ALL {
        assert_eq!(lex.keywords(d), seed.keywords(d));
    }
    let t = default_templates();
    let e = TemplateSet::english_default();
    for d in DomainId::ALL {
        assert_eq!(t.get(d).unwrap(), e.get(d).unwrap());
    }
}

#[test]
fn stopword_is_rejected() {
    let text = r#"{"math": ["the"], "code": ["x1"], "format": ["json"], "commonsense": ["best"]}"#;
    let err = parse_lexicon(text, "t").unwrap_err();
    assert!(
        matches!(err, LexiconError::Invalid(PromptError::LexiconRejected(ref w)) if w == "the"),
        "{err}"
    );
}

#[test]
fn missing_domain_is_an_empty_domain() {
    let text = r#"{"math": ["sum"], "code": ["class"], "commonsense": ["best"]}"#;
    let err = parse_lexicon(text, "t").unwrap_err();
    assert!(
        matches!(err, LexiconError::Invalid(PromptError::EmptyDomain(ref d)) if d == "format"),
        "{err}"
    );
}

#[test]
fn entries_are_lowercased_and_matched_through_tokenizer_markers() {
    let text =
        r#"{"math": ["Equation"], "code": ["class"], "format": ["json"], "commonsense": ["best"]}"#;
    let lex = parse_lexicon(text, "t").unwrap();
    assert_eq!(lex.keywords(DomainId::Math), ["equation"]);
    let tokens = ["Solve", "\u{0120}the", "\u{0120}Equations", "now"];
    assert_eq!(match_keywords(&tokens, &lex, DomainId::Math), vec![2]);
}

#[test]
fn unknown_domain_and_bad_json() {
    assert!(parse_lexicon(r#"{"poetry": ["rhyme"]}"#, "t").is_err());
    assert!(matches!(
        parse_lexicon("[", "t"),
        Err(LexiconError::Malformed(_))
    ));
    assert!(parse_templates(r#"{"math": "x"}"#).is_err());
}

#[test]
fn file_provenance_is_the_file_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("custom.json");
    std::fs::write(&path, ride::lexicon::DEFAULT_LEXICON_JSON).unwrap();
    let lex = load_lexicon(&path).unwrap();
    assert_eq!(lex.provenance(DomainId::Code), Some("custom.json"));
    assert!(load_lexicon(&dir.path().join("absent.json")).is_err());
}
