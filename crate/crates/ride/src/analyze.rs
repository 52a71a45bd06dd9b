//! End-to-end analysis runs: load bundles, validate, compute metric rows,
//! paired deltas, per-table statistics with BH-FDR, and write every output.
//!
//! Outputs are assembled in memory as `relative path -> text` and written
//! afterwards, so a run is a pure function of its config and traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use ride_core::metrics::{ConditionDiagnostics, Metric, MetricConfig, MetricTable, RunDiagnostics};
use ride_core::stats::{
    bh_fdr, correlation, mean_sem, paired_deltas, paired_t, wilcoxon_signed_rank, DeltaTable,
    SignificanceMarker, StatResult,
};
use ride_core::{validate_bundle, TraceBundle, ValidationReport};

use crate::bundle::{read_trace_bundle, write_atomic, BundleError};
use crate::config::{
    Contrast, CorrelationSpec, DeltaSummarySpec, MarkerSource, PairedTest, RunConfig, TableSpec,
};
use crate::lexicon::{default_lexicon, load_lexicon, DEFAULT_LEXICON_JSON};
use crate::report::{
    raw, render_correlation_table, render_delta_table, tsv_line, CorrelationCell, DeltaCell,
    ReportTable,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("{model}: validation failed with {} violation(s); rerun with force to analyze anyway", report.violations.len())]
    Validation {
        model: String,
        report: ValidationReport,
    },
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl AnalyzeError {
    /// 2 for config problems, 1 for everything about the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            AnalyzeError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Output files keyed by path relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outputs {
    pub files: BTreeMap<String, String>,
}

impl Outputs {
    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(path).map(String::as_str)
    }

    pub fn write(&self, dir: &Path) -> Result<(), AnalyzeError> {
        for (rel, text) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| AnalyzeError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
            write_atomic(&path, text.as_bytes())?;
        }
        Ok(())
    }
}

/// Reads the configured bundles, analyzes them and writes the outputs.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<Outputs, AnalyzeError> {
    let outputs = run_analysis(cfg)?;
    outputs.write(&cfg.output_dir)?;
    Ok(outputs)
}

/// Reads the configured bundles and analyzes them without writing.
pub fn run_analysis(cfg: &RunConfig) -> Result<Outputs, AnalyzeError> {
    let mut bundles = Vec::with_capacity(cfg.traces.len());
    for path in &cfg.traces {
        bundles.push(read_trace_bundle(path)?);
    }
    analyze_bundles(bundles, cfg)
}

struct ModelRun {
    bundle: TraceBundle,
    table: MetricTable,
    diagnostics: RunDiagnostics,
    validation: ValidationReport,
}

struct LexiconInfo {
    source: String,
    digest: String,
    keywords: BTreeMap<String, usize>,
}

fn lexicon_info(cfg: &RunConfig) -> Result<LexiconInfo, AnalyzeError> {
    let (lexicon, bytes, source) = match &cfg.lexicon {
        Some(path) => {
            let lex = load_lexicon(path).map_err(|e| AnalyzeError::Config(e.to_string()))?;
            let bytes = fs::read(path).map_err(|e| AnalyzeError::Config(e.to_string()))?;
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            (lex, bytes, name)
        }
        None => (
            default_lexicon(),
            DEFAULT_LEXICON_JSON.as_bytes().to_vec(),
            "default".to_string(),
        ),
    };
    let keywords = lexicon
        .domains()
        .map(|d| (d.as_str().to_string(), lexicon.keywords(d).len()))
        .collect();
    Ok(LexiconInfo {
        source,
        digest: format!("{:016x}", crate::format::checksum(&bytes)),
        keywords,
    })
}

/// Analyzes bundles already in memory. Bundles sharing a model id are
/// merged first.
pub fn analyze_bundles(
    bundles: Vec<TraceBundle>,
    cfg: &RunConfig,
) -> Result<Outputs, AnalyzeError> {
    cfg.validate()
        .map_err(|e| AnalyzeError::Config(e.to_string()))?;
    let lexicon = lexicon_info(cfg)?;

    let mut grouped: BTreeMap<String, Vec<TraceBundle>> = BTreeMap::new();
    for b in bundles {
        grouped
            .entry(b.manifest.model_id.clone())
            .or_default()
            .push(b);
    }
    if grouped.is_empty() {
        return Err(AnalyzeError::Data("no trace bundles".into()));
    }

    let metric_config = MetricConfig {
        alpha: cfg.alpha,
        shape_stats: cfg.shape_stats,
    };
    let mut runs: BTreeMap<String, ModelRun> = BTreeMap::new();
    for (model, shards) in grouped {
        let bundle = TraceBundle::merge(shards).map_err(BundleError::from)?;
        let validation = validate_bundle(&bundle);
        if !validation.passed() && !cfg.force {
            return Err(AnalyzeError::Validation {
                model,
                report: validation,
            });
        }
        let (table, diagnostics) = MetricTable::from_bundle(&bundle, &metric_config)
            .map_err(|e| AnalyzeError::Data(format!("{model}: {e}")))?;
        runs.insert(
            model,
            ModelRun {
                bundle,
                table,
                diagnostics,
                validation,
            },
        );
    }

    let tables = resolve_tables(cfg, &runs)?;
    let mut contrasts: Vec<Contrast> = Vec::new();
    for c in cfg
        .contrasts
        .iter()
        .chain(tables.iter().flat_map(|t| t.contrasts(&cfg.contrasts)))
    {
        if !contrasts.contains(c) {
            contrasts.push(*c);
        }
    }
    check_contrasts(&contrasts, &runs)?;

    let mut deltas: BTreeMap<(String, Contrast), DeltaTable> = BTreeMap::new();
    for (model, run) in &runs {
        for &c in &contrasts {
            let d = paired_deltas(&run.table, c.condition, c.baseline)
                .map_err(|e| AnalyzeError::Data(format!("{model}: {c}: {e}")))?;
            deltas.insert((model.clone(), c), d);
        }
    }

    let mut out = Outputs::default();
    let models: Vec<&str> = runs.keys().map(String::as_str).collect();
    out.files.insert("metrics.tsv".into(), metrics_tsv(&runs));
    for &c in &contrasts {
        out.files.insert(
            format!("deltas/{}.tsv", c.key()),
            deltas_tsv(&models, c, &deltas),
        );
    }
    out.files.insert(
        "plot_data.tsv".into(),
        plot_data_tsv(&models, &contrasts, &deltas, &runs),
    );

    let mut table_summaries = Vec::new();
    for spec in &tables {
        let family = match spec {
            TableSpec::DeltaSummary(s) => delta_family(s, cfg, &models, &deltas)?,
            TableSpec::Correlation(s) => correlation_family(s, cfg, &models, &deltas)?,
        };
        out.files
            .insert(format!("stats/{}.tsv", spec.name()), family.stats_tsv);
        out.files
            .insert(format!("tables/{}.tsv", spec.name()), family.table.to_tsv());
        table_summaries.push(json!({
            "name": spec.name(),
            "kind": match spec {
                TableSpec::DeltaSummary(_) => "delta_summary",
                TableSpec::Correlation(_) => "correlation",
            },
            "tests": family.tests,
            "rejected": family.rejected,
        }));
    }

    out.files
        .insert("diagnostics.json".into(), diagnostics_json(&runs));
    let mut files: Vec<String> = out.files.keys().cloned().collect();
    files.push("run.json".into());
    files.sort();
    let run = json!({
        "tool": "ride",
        "version": env!("CARGO_PKG_VERSION"),
        "settings": {
            "q": cfg.q,
            "alpha": cfg.alpha,
            "decimals": cfg.decimals,
            "markers": cfg.markers,
            "test": cfg.test,
            "shape_stats": cfg.shape_stats,
            "force": cfg.force,
            "segments": cfg.segments,
            "contrasts": contrasts.iter().map(Contrast::key).collect::<Vec<_>>(),
        },
        "lexicon": {
            "source": lexicon.source,
            "digest": lexicon.digest,
            "keywords": lexicon.keywords,
        },
        "models": runs.values().map(|r| {
            let m = &r.bundle.manifest;
            json!({
                "model_id": m.model_id,
                "instances": r.bundle.instances.len(),
                "conditions": m.conditions,
                "num_layers": m.num_layers,
                "hidden_dim": m.hidden_dim,
                "k": m.decoding.k,
                "seed_list": m.seed_list,
                "vocab_size": m.vocab_size,
                "encoder_id": m.encoder_id,
            })
        }).collect::<Vec<_>>(),
        "tables": table_summaries,
        "files": files,
    });
    out.files.insert("run.json".into(), pretty(&run));
    Ok(out)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// Configured tables, or the defaults restricted to contrasts every model
/// can supply.
fn resolve_tables(
    cfg: &RunConfig,
    runs: &BTreeMap<String, ModelRun>,
) -> Result<Vec<TableSpec>, AnalyzeError> {
    if !cfg.tables.is_empty() {
        return Ok(cfg.tables.clone());
    }
    let available = |c: &Contrast| {
        runs.values().all(|r| {
            let conds = &r.bundle.manifest.conditions;
            conds.contains(&c.condition) && conds.contains(&c.baseline)
        })
    };
    let mut out = Vec::new();
    for mut t in cfg.effective_tables() {
        let list = match &mut t {
            TableSpec::DeltaSummary(s) => &mut s.contrasts,
            TableSpec::Correlation(s) => &mut s.contrasts,
        };
        if let Some(l) = list {
            l.retain(|c| available(c));
            if l.is_empty() {
                continue;
            }
        }
        out.push(t);
    }
    Ok(out)
}

fn check_contrasts(
    contrasts: &[Contrast],
    runs: &BTreeMap<String, ModelRun>,
) -> Result<(), AnalyzeError> {
    for (model, run) in runs {
        let conds = &run.bundle.manifest.conditions;
        for c in contrasts {
            for side in [c.condition, c.baseline] {
                if !conds.contains(&side) {
                    return Err(AnalyzeError::Config(format!(
                        "contrast {c}: condition {side} is not in the manifest of {model}"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn metrics_tsv(runs: &BTreeMap<String, ModelRun>) -> String {
    let metrics = runs
        .values()
        .next()
        .map(|r| r.table.metrics.clone())
        .unwrap_or_default();
    let mut header = vec![
        "model".into(),
        "instance".into(),
        "domain".into(),
        "condition".into(),
    ];
    header.extend(metrics.iter().map(Metric::name));
    let mut s = tsv_line(&header);
    for (model, run) in runs {
        for row in &run.table.rows {
            let mut fields = vec![
                model.clone(),
                row.instance_id.clone(),
                row.domain.as_str().to_string(),
                row.condition.as_str().to_string(),
            ];
            fields.extend(metrics.iter().map(|&m| raw(row.get(m))));
            s.push_str(&tsv_line(&fields));
        }
    }
    s
}

fn deltas_tsv(
    models: &[&str],
    contrast: Contrast,
    deltas: &BTreeMap<(String, Contrast), DeltaTable>,
) -> String {
    let mut s = String::new();
    for (i, model) in models.iter().enumerate() {
        let d = &deltas[&(model.to_string(), contrast)];
        if i == 0 {
            let mut header = vec!["model".into(), "instance".into(), "domain".into()];
            header.extend(d.columns.keys().map(Metric::name));
            s.push_str(&tsv_line(&header));
        }
        for (j, id) in d.instance_ids.iter().enumerate() {
            let mut fields = vec![
                model.to_string(),
                id.clone(),
                d.domains[j].as_str().to_string(),
            ];
            fields.extend(d.columns.values().map(|col| raw(col[j])));
            s.push_str(&tsv_line(&fields));
        }
    }
    s
}

/// Long format: one line per (model, contrast, metric).
fn plot_data_tsv(
    models: &[&str],
    contrasts: &[Contrast],
    deltas: &BTreeMap<(String, Contrast), DeltaTable>,
    runs: &BTreeMap<String, ModelRun>,
) -> String {
    let header: Vec<String> = ["model", "contrast", "metric", "n", "mean", "sem"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut s = tsv_line(&header);
    for model in models {
        for &c in contrasts {
            let d = &deltas[&(model.to_string(), c)];
            for &m in &runs[*model].table.metrics {
                let v = d.values(m);
                let ms = mean_sem(&v).ok();
                s.push_str(&tsv_line(&[
                    model.to_string(),
                    c.key(),
                    m.name(),
                    v.len().to_string(),
                    raw(ms.map(|x| x.mean)),
                    raw(ms.map(|x| x.sem)),
                ]));
            }
        }
    }
    s
}

fn diag_json(d: &ConditionDiagnostics) -> Value {
    json!({
        "traces": d.traces,
        "degenerate_vectors": d.degenerate_vectors,
        "degenerate_kurtosis": d.degenerate_kurtosis,
        "degenerate_layer_energy": d.degenerate_layer_energy,
        "missing_keywords": d.missing_keywords,
        "missing_keyword_rate": d.missing_keyword_rate(),
        "undefined_values": d.undefined_values,
    })
}

fn diagnostics_json(runs: &BTreeMap<String, ModelRun>) -> String {
    let mut models = serde_json::Map::new();
    for (model, run) in runs {
        let mut rules: BTreeMap<&str, usize> = BTreeMap::new();
        for v in &run.validation.violations {
            *rules.entry(v.rule.as_str()).or_default() += 1;
        }
        let conditions: serde_json::Map<String, Value> = run
            .diagnostics
            .per_condition
            .iter()
            .map(|(c, d)| (c.as_str().to_string(), diag_json(d)))
            .collect();
        models.insert(
            model.clone(),
            json!({
                "validation": {
                    "violations": run.validation.violations.len(),
                    "rules": rules,
                },
                "conditions": conditions,
                "total": diag_json(&run.diagnostics.total()),
            }),
        );
    }
    pretty(&json!({ "models": models }))
}

struct Family {
    table: ReportTable,
    stats_tsv: String,
    tests: usize,
    rejected: usize,
}

/// Adjusted p-values for the defined entries of one family, in order.
fn adjust(p: &[Option<f64>], q: f64) -> Result<(Vec<Option<f64>>, Vec<bool>), AnalyzeError> {
    let defined: Vec<f64> = p.iter().flatten().copied().collect();
    let mut adjusted = vec![None; p.len()];
    let mut reject = vec![false; p.len()];
    if defined.is_empty() {
        return Ok((adjusted, reject));
    }
    let bh = bh_fdr(&defined, q).map_err(|e| AnalyzeError::Data(e.to_string()))?;
    let mut k = 0;
    for (i, v) in p.iter().enumerate() {
        if v.is_some() {
            adjusted[i] = Some(bh.adjusted[k]);
            reject[i] = bh.reject[k];
            k += 1;
        }
    }
    Ok((adjusted, reject))
}

fn marker_for(
    source: MarkerSource,
    p: Option<f64>,
    p_adj: Option<f64>,
) -> Option<SignificanceMarker> {
    match source {
        MarkerSource::Adjusted => p_adj,
        MarkerSource::Raw => p,
    }
    .map(SignificanceMarker::from_p)
}

fn strings(fields: &[&str]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

fn delta_family(
    spec: &DeltaSummarySpec,
    cfg: &RunConfig,
    models: &[&str],
    deltas: &BTreeMap<(String, Contrast), DeltaTable>,
) -> Result<Family, AnalyzeError> {
    let contrasts = spec.contrasts.as_deref().unwrap_or(&cfg.contrasts);
    let test = spec.test.unwrap_or(cfg.test);
    let mut cells = Vec::new();
    let mut results: Vec<(usize, Option<StatResult>)> = Vec::new();
    for model in models {
        for &contrast in contrasts {
            let d = &deltas[&(model.to_string(), contrast)];
            for &metric in &spec.metrics {
                if !d.columns.contains_key(&metric) {
                    return Err(AnalyzeError::Config(format!(
                        "table `{}`: metric {metric} is not computed (shape statistics disabled?)",
                        spec.name
                    )));
                }
                let v = d.values(metric);
                let ms = mean_sem(&v).ok();
                let result = match test {
                    PairedTest::PairedT => paired_t(&v),
                    PairedTest::Wilcoxon => wilcoxon_signed_rank(&v),
                }
                .ok();
                cells.push(DeltaCell {
                    model: model.to_string(),
                    contrast,
                    metric,
                    mean: ms.map(|x| x.mean),
                    sem: ms.map(|x| x.sem),
                    marker: None,
                });
                results.push((v.len(), result));
            }
        }
    }
    let p: Vec<Option<f64>> = results
        .iter()
        .map(|(_, t)| t.as_ref().map(|t| t.p_value))
        .collect();
    let (p_adj, reject) = adjust(&p, cfg.q)?;

    let mut stats_tsv = tsv_line(&strings(&[
        "model",
        "contrast",
        "metric",
        "n",
        "mean",
        "sem",
        "statistic",
        "p",
        "p_adj",
        "reject",
        "marker",
        "effect_size",
        "method",
    ]));
    for (i, (cell, (n, t))) in cells.iter_mut().zip(&results).enumerate() {
        cell.marker = marker_for(cfg.markers, p[i], p_adj[i]);
        stats_tsv.push_str(&tsv_line(&[
            cell.model.clone(),
            cell.contrast.key(),
            cell.metric.name(),
            n.to_string(),
            raw(cell.mean),
            raw(cell.sem),
            raw(t.as_ref().map(|t| t.statistic)),
            raw(p[i]),
            raw(p_adj[i]),
            reject[i].to_string(),
            cell.marker
                .map_or("NA", SignificanceMarker::as_str)
                .to_string(),
            raw(t.as_ref().and_then(|t| t.effect_size)),
            t.as_ref().map_or("NA", |t| t.method.as_str()).to_string(),
        ]));
    }
    let decimals = spec.decimals.unwrap_or(cfg.decimals);
    Ok(Family {
        table: render_delta_table(spec, contrasts, decimals, models, &cells),
        stats_tsv,
        tests: p.iter().flatten().count(),
        rejected: reject.iter().filter(|r| **r).count(),
    })
}

fn correlation_family(
    spec: &CorrelationSpec,
    cfg: &RunConfig,
    models: &[&str],
    deltas: &BTreeMap<(String, Contrast), DeltaTable>,
) -> Result<Family, AnalyzeError> {
    let contrasts = spec.contrasts.as_deref().unwrap_or(&cfg.contrasts);
    let mut cells = Vec::new();
    let mut results: Vec<(usize, Option<StatResult>)> = Vec::new();
    for model in models {
        for &contrast in contrasts {
            let d = &deltas[&(model.to_string(), contrast)];
            for metric in [spec.x, spec.y] {
                if !d.columns.contains_key(&metric) {
                    return Err(AnalyzeError::Config(format!(
                        "table `{}`: metric {metric} is not computed",
                        spec.name
                    )));
                }
            }
            let (x, y) = d.pairs(spec.x, spec.y);
            let r = correlation(&x, &y, spec.method).ok();
            cells.push(CorrelationCell {
                model: model.to_string(),
                contrast,
                r: r.as_ref().map(|t| t.statistic),
                p: r.as_ref().map(|t| t.p_value),
                marker: None,
            });
            results.push((x.len(), r));
        }
    }
    let p: Vec<Option<f64>> = cells.iter().map(|c| c.p).collect();
    let (p_adj, reject) = adjust(&p, cfg.q)?;

    let mut stats_tsv = tsv_line(&strings(&[
        "model", "contrast", "x", "y", "n", "r", "ci_low", "ci_high", "p", "p_adj", "reject",
        "marker", "method",
    ]));
    for (i, (cell, (n, t))) in cells.iter_mut().zip(&results).enumerate() {
        cell.marker = marker_for(cfg.markers, p[i], p_adj[i]);
        stats_tsv.push_str(&tsv_line(&[
            cell.model.clone(),
            cell.contrast.key(),
            spec.x.name(),
            spec.y.name(),
            n.to_string(),
            raw(cell.r),
            raw(t.as_ref().and_then(|t| t.ci_low)),
            raw(t.as_ref().and_then(|t| t.ci_high)),
            raw(p[i]),
            raw(p_adj[i]),
            reject[i].to_string(),
            cell.marker
                .map_or("NA", SignificanceMarker::as_str)
                .to_string(),
            spec.method.as_str().to_string(),
        ]));
    }
    Ok(Family {
        table: render_correlation_table(spec, contrasts, models, &cells),
        stats_tsv,
        tests: p.iter().flatten().count(),
        rejected: reject.iter().filter(|r| **r).count(),
    })
}
