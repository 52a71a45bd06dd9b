//! Run configuration, read from TOML.
//!
//! ```toml
//! traces = ["bundles/llama", "bundles/mistral-shard0", "bundles/mistral-shard1"]
//! output_dir = "out"
//! lexicon = "lexicon.json"
//! q = 0.05
//! contrasts = [["tag_correct", "control"], ["instr_expert", "control"]]
//!
//! [[tables]]
//! kind = "delta_summary"
//! name = "c1_early"
//! title = "Early segment: mean ± SEM of ΔHoyer"
//! metrics = ["hoyer_prompt_early"]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Without any `[[tables]]`, the default table set is used.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ride_core::density::TokenScope;
use ride_core::metrics::Metric;
use ride_core::stats::CorrelationMethod;
use ride_core::{ConditionId, Segment};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Ordered pair (condition, baseline); deltas are `condition − baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[ConditionId; 2]", into = "[ConditionId; 2]")]
pub struct Contrast {
    pub condition: ConditionId,
    pub baseline: ConditionId,
}

impl From<[ConditionId; 2]> for Contrast {
    fn from([condition, baseline]: [ConditionId; 2]) -> Self {
        Self {
            condition,
            baseline,
        }
    }
}

impl From<Contrast> for [ConditionId; 2] {
    fn from(c: Contrast) -> Self {
        [c.condition, c.baseline]
    }
}

impl Contrast {
    pub const fn new(condition: ConditionId, baseline: ConditionId) -> Self {
        Self {
            condition,
            baseline,
        }
    }

    /// `tag_correct_vs_control`
    pub fn key(&self) -> String {
        format!("{}_vs_{}", self.condition, self.baseline)
    }

    /// `Tag–Ctrl`
    pub fn label(&self) -> String {
        format!(
            "{}\u{2013}{}",
            self.condition.short_label(),
            self.baseline.short_label()
        )
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

const TAG_CTRL: Contrast = Contrast::new(ConditionId::TagCorrect, ConditionId::Control);
const INSTR_CTRL: Contrast = Contrast::new(ConditionId::InstrExpert, ConditionId::Control);
const TAG_INSTR: Contrast = Contrast::new(ConditionId::TagCorrect, ConditionId::InstrExpert);
const WRONG_CTRL: Contrast = Contrast::new(ConditionId::TagWrong, ConditionId::Control);
const PLACEBO_CTRL: Contrast = Contrast::new(ConditionId::TagPlacebo, ConditionId::Control);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedTest {
    #[default]
    PairedT,
    Wilcoxon,
}

/// Which p-value drives the significance markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerSource {
    #[default]
    Adjusted,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSummarySpec {
    pub name: String,
    pub title: String,
    pub metrics: Vec<Metric>,
    /// Defaults to the run's contrasts.
    #[serde(default)]
    pub contrasts: Option<Vec<Contrast>>,
    #[serde(default = "yes")]
    pub signed: bool,
    /// Defaults to the run's rounding.
    #[serde(default)]
    pub decimals: Option<u32>,
    /// Append significance markers to cells.
    #[serde(default)]
    pub markers: bool,
    #[serde(default)]
    pub test: Option<PairedTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSpec {
    pub name: String,
    pub title: String,
    pub x: Metric,
    pub y: Metric,
    #[serde(default = "pearson")]
    pub method: CorrelationMethod,
    #[serde(default)]
    pub contrasts: Option<Vec<Contrast>>,
    /// Add a raw p-value column after each coefficient column.
    #[serde(default)]
    pub show_p: bool,
}

/// One report table; each table is its own FDR family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TableSpec {
    DeltaSummary(DeltaSummarySpec),
    Correlation(CorrelationSpec),
}

impl TableSpec {
    pub fn name(&self) -> &str {
        match self {
            TableSpec::DeltaSummary(s) => &s.name,
            TableSpec::Correlation(s) => &s.name,
        }
    }

    pub fn contrasts<'a>(&'a self, run: &'a [Contrast]) -> &'a [Contrast] {
        let own = match self {
            TableSpec::DeltaSummary(s) => s.contrasts.as_deref(),
            TableSpec::Correlation(s) => s.contrasts.as_deref(),
        };
        own.unwrap_or(run)
    }
}

fn yes() -> bool {
    true
}

fn pearson() -> CorrelationMethod {
    CorrelationMethod::Pearson
}

fn default_q() -> f64 {
    0.05
}

fn default_alpha() -> f64 {
    ride_core::density::DEFAULT_ALPHA
}

fn default_decimals() -> u32 {
    crate::report::DEFAULT_DECIMALS
}

fn default_contrasts() -> Vec<Contrast> {
    vec![TAG_CTRL, INSTR_CTRL, TAG_INSTR]
}

fn default_segments() -> Vec<Segment> {
    Segment::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Bundle directories. Bundles with the same model id are merged.
    pub traces: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_contrasts")]
    pub contrasts: Vec<Contrast>,
    #[serde(default = "default_segments")]
    pub segments: Vec<Segment>,
    #[serde(default = "default_q")]
    pub q: f64,
    /// Decimal places for `mean ± SEM` cells.
    #[serde(default = "default_decimals")]
    pub decimals: u32,
    #[serde(default)]
    pub markers: MarkerSource,
    #[serde(default)]
    pub test: PairedTest,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "yes")]
    pub shape_stats: bool,
    /// Analyze even when validation reports violations.
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub tables: Vec<TableSpec>,
}

impl RunConfig {
    /// A config with defaults everywhere except the required fields.
    pub fn new(traces: Vec<PathBuf>, output_dir: PathBuf) -> Self {
        Self {
            traces,
            output_dir,
            lexicon: None,
            contrasts: default_contrasts(),
            segments: default_segments(),
            q: default_q(),
            decimals: default_decimals(),
            markers: MarkerSource::default(),
            test: PairedTest::default(),
            alpha: default_alpha(),
            shape_stats: true,
            force: false,
            tables: Vec::new(),
        }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.traces.iter_mut().for_each(resolve);
        resolve(&mut cfg.output_dir);
        if let Some(l) = cfg.lexicon.as_mut() {
            resolve(l);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.traces.is_empty() {
            return bad("no trace bundles listed".into());
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} is outside (0, 1)", self.q));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha = {} is outside (0, 1]", self.alpha));
        }
        if self.decimals > 9 {
            return bad(format!("decimals = {} is above 9", self.decimals));
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tables {
            let name = t.name();
            if !crate::bundle::is_safe_instance_id(name) {
                return bad(format!("table name `{name}` is not a plain file name"));
            }
            if !names.insert(name) {
                return bad(format!("table name `{name}` used twice"));
            }
            if let TableSpec::DeltaSummary(s) = t {
                if s.metrics.is_empty() {
                    return bad(format!("table `{name}` lists no metrics"));
                }
                if s.decimals.is_some_and(|d| d > 9) {
                    return bad(format!("table `{name}`: decimals above 9"));
                }
            }
            if t.contrasts(&self.contrasts).is_empty() {
                return bad(format!("table `{name}` has no contrasts"));
            }
        }
        for c in self
            .contrasts
            .iter()
            .chain(self.tables.iter().flat_map(|t| t.contrasts(&[])))
        {
            if c.condition == c.baseline {
                return bad(format!("contrast {c} compares a condition with itself"));
            }
        }
        Ok(())
    }

    /// Configured tables, or the default set when none are configured.
    pub fn effective_tables(&self) -> Vec<TableSpec> {
        if self.tables.is_empty() {
            default_tables(&self.segments)
        } else {
            self.tables.clone()
        }
    }
}

fn segment_title(seg: Segment) -> &'static str {
    match seg {
        Segment::Early => "Early",
        Segment::Middle => "Middle",
        Segment::Late => "Late",
        Segment::Global => "Global",
    }
}

/// Density tables per segment, keyword attention per view, the
/// density/stability and attention/entropy correlations, and a wrong-tag
/// and placebo check.
pub fn default_tables(segments: &[Segment]) -> Vec<TableSpec> {
    let mut out = Vec::new();
    let hoyer = |seg| Metric::hoyer(TokenScope::Prompt, seg);
    for &seg in segments {
        out.push(TableSpec::DeltaSummary(DeltaSummarySpec {
            name: format!("c1_{}", seg.as_str()),
            title: format!(
                "{} segment: mean \u{b1} SEM of \u{394}Hoyer",
                segment_title(seg)
            ),
            metrics: vec![hoyer(seg)],
            contrasts: Some(vec![TAG_CTRL, INSTR_CTRL, TAG_INSTR]),
            signed: true,
            decimals: None,
            markers: false,
            test: None,
        }));
    }
    for (q, view) in [
        (
            ride_core::attention::AttentionQuery::PromptLast,
            "Prompt-last",
        ),
        (ride_core::attention::AttentionQuery::FirstGen, "First-gen"),
    ] {
        out.push(TableSpec::DeltaSummary(DeltaSummarySpec {
            name: format!("rq2_attn_{}", q.as_str()),
            title: format!("Mean \u{b1} SEM of \u{394}Attn ({view} view)"),
            metrics: vec![Metric::AttnShare(q)],
            contrasts: Some(vec![TAG_CTRL, INSTR_CTRL]),
            signed: true,
            decimals: Some(4),
            markers: false,
            test: None,
        }));
    }
    out.push(TableSpec::Correlation(CorrelationSpec {
        name: "rq2_attn_entropy_corr".into(),
        title: "Pearson r between \u{394}Attn (First-gen) and \u{394}Entropy".into(),
        x: Metric::AttnShare(ride_core::attention::AttentionQuery::FirstGen),
        y: Metric::MeanEntropy,
        method: CorrelationMethod::Pearson,
        contrasts: Some(vec![INSTR_CTRL]),
        show_p: true,
    }));
    let global = hoyer(Segment::Global);
    for (name, y, what) in [
        ("rq3_corr_entropy", Metric::MeanEntropy, "\u{394}Entropy"),
        ("rq3_corr_semvar", Metric::SemanticVar, "\u{394}Var"),
    ] {
        out.push(TableSpec::Correlation(CorrelationSpec {
            name: name.into(),
            title: format!("Pearson r between \u{394}Hoyer (prompt) and {what}"),
            x: global,
            y,
            method: CorrelationMethod::Pearson,
            contrasts: Some(vec![INSTR_CTRL, TAG_CTRL, TAG_INSTR]),
            show_p: false,
        }));
    }
    let mut checks: Vec<Metric> = segments.iter().map(|&s| hoyer(s)).collect();
    checks.push(Metric::AttnShare(
        ride_core::attention::AttentionQuery::PromptLast,
    ));
    checks.push(Metric::AttnShare(
        ride_core::attention::AttentionQuery::FirstGen,
    ));
    for (name, contrast, what) in [
        ("check_placebo", PLACEBO_CTRL, "Placebo"),
        ("check_wrong_tag", WRONG_CTRL, "Wrong tag"),
    ] {
        out.push(TableSpec::DeltaSummary(DeltaSummarySpec {
            name: name.into(),
            title: format!("{what} vs control: mean \u{b1} SEM of paired differences"),
            metrics: checks.clone(),
            contrasts: Some(vec![contrast]),
            signed: true,
            decimals: None,
            markers: true,
            test: None,
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_resolves_paths() {
        let cfg = RunConfig::parse(
            "traces = [\"a\"]\noutput_dir = \"out\"\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.traces, vec![PathBuf::from("/base/a")]);
        assert_eq!(cfg.output_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.q, 0.05);
        assert_eq!(cfg.contrasts.len(), 3);
        assert!(!cfg.effective_tables().is_empty());
    }

    #[test]
    fn parses_tables() {
        let text = r#"
traces = ["a"]
output_dir = "o"
contrasts = [["tag_placebo", "control"]]

[[tables]]
kind = "delta_summary"
name = "t1"
title = "T"
metrics = ["hoyer_prompt_early", "attn_share_first_gen"]
decimals = 4

[[tables]]
kind = "correlation"
name = "t2"
title = "C"
x = "hoyer_prompt_global"
y = "semantic_var"
method = "spearman"
"#;
        let cfg = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.tables.len(), 2);
        match &cfg.tables[1] {
            TableSpec::Correlation(c) => assert_eq!(c.method, CorrelationMethod::Spearman),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_values() {
        let base = Path::new(".");
        assert!(RunConfig::parse("traces = [\"a\"]\noutput_dir = \"o\"\nq = 1.5\n", base).is_err());
        assert!(RunConfig::parse("traces = []\noutput_dir = \"o\"\n", base).is_err());
        assert!(
            RunConfig::parse("traces = [\"a\"]\noutput_dir = \"o\"\nbogus = 1\n", base).is_err()
        );
        assert!(RunConfig::parse(
            "traces = [\"a\"]\noutput_dir = \"o\"\ncontrasts = [[\"control\", \"control\"]]\n",
            base
        )
        .is_err());
        assert!(RunConfig::parse(
            "traces = [\"a\"]\noutput_dir = \"o\"\n[[tables]]\nkind = \"delta_summary\"\nname = \"x\"\ntitle = \"t\"\nmetrics = [\"nope\"]\n",
            base
        )
        .is_err());
    }
}
