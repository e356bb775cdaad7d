//! Face recovery and attribute match rates measured through a pluggable
//! face-analysis client.

mod client;
mod metrics;
mod probe;
pub mod remote;
mod report;
mod stub;

pub use client::{content_key, encode_png, CachedClient, ClientKind, FaceAnalysisClient, FaceAnalysisResult};
pub use metrics::{match_rate, recovery_rate, AttributeRates, GroupCounts};
pub use probe::{
    probe_model, probe_set_id, AttributeCounts, BiasReport, Outcome, ProbeOptions, ProbeRecord, RouteResult, Tallies,
    DEFAULT_REPEATS,
};
pub use remote::{RemoteClient, RemoteConfig};
pub use report::{confound_estimate, report_tables, ConfoundEstimate, ReportTables, Table};
pub use stub::{stub_classify, stub_cues, StubClassifier, StubCues};
