//! Core metrics and statistics for routing-prefix intervention diagnostics.
//!
//! Everything in this crate is pure computation over in-memory traces: the
//! five prefix conditions and keyword lexicon, the density (C1),
//! keyword-attention (C2) and output-stability (C3) metric families, and the
//! paired-difference statistics built on top of them. File formats, the
//! command line and report rendering live in the `ride` crate.
//!
//! The crate is `no_std` with `alloc`; enable the `std` feature to get
//! `std::error::Error` impls through the standard library prelude.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attention;
pub mod condition;
pub mod density;
pub mod error;
pub mod metrics;
pub mod prompt;
pub mod stability;
pub mod stats;
pub mod trace;
pub mod validate;

pub use condition::ConditionId;
pub use density::{Segment, SegmentPartition, TokenScope};
pub use metrics::{Metric, MetricRow, MetricTable, RunDiagnostics};
pub use prompt::{DomainId, KeywordLexicon, PrefixCondition, TemplateSet};
pub use stats::{DeltaTable, SignificanceMarker, StatResult, StatsError};
pub use trace::{ConditionTrace, GenerationRecord, InstanceTraces, TraceBundle, TraceManifest};
pub use validate::{validate_bundle, ValidationReport, Violation};
