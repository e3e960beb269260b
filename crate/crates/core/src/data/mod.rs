//! Semantic trace records, ingestion, segmentation, splits, and the
//! candidate-pool evaluation harness.

mod eval;
mod ingest;
mod pool;
mod segment;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate_prediction, rank_candidates, AccuracyRow, AccuracyTable, CandidateScorer};
pub use ingest::{
    day_seconds, open_maybe_gz, parse_timestamp, read_corpus, read_raw_records, write_corpus,
    RawRecord,
};
pub use pool::{
    build_candidate_pool, build_candidate_pools, haversine_m, CandidatePool, PoolConfig,
    RecordIndex,
};
pub use segment::{segment_history, split_corpus, Segmentation};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// One `(time, location, message embedding)` observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRecord {
    pub user_id: String,
    /// Seconds since the Unix epoch.
    pub t_abs: f64,
    /// Seconds since local midnight, in `[0, 86400)`.
    pub t_day: f64,
    /// `(lon, lat)` in degrees, or projected coordinates.
    pub loc: [f64; 2],
    /// Unit-norm message embedding.
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl SemanticRecord {
    pub fn dim(&self) -> usize {
        self.embedding.len()
    }
}

/// Time-ordered records of a single user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<SemanticRecord>,
}

impl Trace {
    pub fn new(records: Vec<SemanticRecord>) -> Self {
        Trace { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn user_id(&self) -> Option<&str> {
        self.records.first().map(|r| r.user_id.as_str())
    }

    /// All but the final record, and the final record.
    pub fn split_last(&self) -> Option<(&[SemanticRecord], &SemanticRecord)> {
        self.records.split_last().map(|(last, prefix)| (prefix, last))
    }
}
