use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SemanticRecord, Trace, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters between two `(lon, lat)` points in degrees.
pub fn haversine_m(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
    let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Time-of-day distance on the 24 h circle, in `[0, 43200]`.
pub fn circular_day_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(SECONDS_PER_DAY);
    d.min(SECONDS_PER_DAY - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Maximum great-circle distance of a negative from the truth, meters.
    pub dist_thresh_m: f64,
    /// Maximum circular time-of-day difference, seconds.
    pub time_thresh_s: f64,
    /// Pool size including the truth.
    pub pool_size: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            dist_thresh_m: 3500.0,
            time_thresh_s: 300.0,
            pool_size: 10,
        }
    }
}

/// Records sorted by time of day, for window queries.
#[derive(Debug, Clone)]
pub struct RecordIndex {
    records: Vec<SemanticRecord>,
}

impl RecordIndex {
    pub fn new(mut records: Vec<SemanticRecord>) -> Self {
        // Stable, so equal t_day keep input order and queries are reproducible.
        records.sort_by(|a, b| a.t_day.total_cmp(&b.t_day));
        RecordIndex { records }
    }

    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> Self {
        Self::new(traces.into_iter().flat_map(|t| t.records.iter().cloned()).collect())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SemanticRecord] {
        &self.records
    }

    /// Records within both thresholds of `truth`, excluding `truth` itself,
    /// in index order.
    pub fn neighbours(&self, truth: &SemanticRecord, cfg: &PoolConfig) -> Vec<&SemanticRecord> {
        let thr = cfg.time_thresh_s;
        let t = truth.t_day;
        let lower = |x: f64| self.records.partition_point(|r| r.t_day < x);
        let upper = |x: f64| self.records.partition_point(|r| r.t_day <= x);
        let mut ranges = Vec::with_capacity(2);
        if 2.0 * thr >= SECONDS_PER_DAY {
            ranges.push(0..self.records.len());
        } else if t - thr < 0.0 {
            ranges.push(lower(t - thr + SECONDS_PER_DAY)..self.records.len());
            ranges.push(0..upper(t + thr));
        } else if t + thr >= SECONDS_PER_DAY {
            ranges.push(lower(t - thr)..self.records.len());
            ranges.push(0..upper(t + thr - SECONDS_PER_DAY));
        } else {
            ranges.push(lower(t - thr)..upper(t + thr));
        }
        ranges.sort_by_key(|r| r.start);
        ranges
            .into_iter()
            .flat_map(|r| self.records[r].iter())
            .filter(|r| {
                !is_same_record(r, truth)
                    && circular_day_diff(r.t_day, t) <= thr
                    && haversine_m(r.loc, truth.loc) <= cfg.dist_thresh_m
            })
            .collect()
    }
}

fn is_same_record(a: &SemanticRecord, b: &SemanticRecord) -> bool {
    a.user_id == b.user_id && a.t_abs == b.t_abs && a.loc == b.loc
}

/// The final record of a test trace mixed with sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub truth_index: usize,
    pub candidates: Vec<SemanticRecord>,
    /// Fewer than `pool_size - 1` negatives qualified.
    pub insufficient_negatives: bool,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn truth(&self) -> &SemanticRecord {
        &self.candidates[self.truth_index]
    }
}

/// Pool for one test trace, seeded by `seed`.
pub fn build_candidate_pool(
    test_trace: &Trace,
    index: &RecordIndex,
    cfg: &PoolConfig,
    seed: u64,
) -> Result<CandidatePool> {
    if test_trace.len() < 2 {
        return Err(Error::domain("test trace needs at least two records"));
    }
    if cfg.pool_size == 0 {
        return Err(Error::Config("pool size must be positive".into()));
    }
    let truth = &test_trace.records[test_trace.len() - 1];
    let pool = index.neighbours(truth, cfg);
    let wanted = cfg.pool_size - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = wanted.min(pool.len());
    let mut picks = index::sample(&mut rng, pool.len(), take).into_vec();
    picks.sort_unstable();
    let mut candidates: Vec<SemanticRecord> = picks.into_iter().map(|i| pool[i].clone()).collect();
    let truth_index = rng.gen_range(0..=candidates.len());
    candidates.insert(truth_index, truth.clone());
    Ok(CandidatePool {
        truth_index,
        candidates,
        insufficient_negatives: take < wanted,
    })
}

/// Pools for every test trace; trace `i` uses seed `seed ^ i`.
pub fn build_candidate_pools(
    tests: &[Trace],
    index: &RecordIndex,
    cfg: &PoolConfig,
    seed: u64,
) -> Result<Vec<CandidatePool>> {
    tests
        .par_iter()
        .enumerate()
        .map(|(i, t)| build_candidate_pool(t, index, cfg, seed ^ i as u64))
        .collect()
}
