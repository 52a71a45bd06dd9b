//! Trace bundle IO, analysis runs, report rendering and the synthetic
//! bundle generator behind the `ride` command line.

pub mod analyze;
pub mod bundle;
pub mod config;
pub mod format;
pub mod lexicon;
pub mod report;
pub mod synth;

pub use analyze::{analyze_bundles, cmd_analyze, run_analysis, AnalyzeError, Outputs};
pub use bundle::{merge_shards, read_trace_bundle, write_bundle, BundleError};
pub use config::RunConfig;
pub use synth::{generate, write_synth, SynthSpec};
