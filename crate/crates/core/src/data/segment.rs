use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SemanticRecord, Trace};
use crate::error::{Error, Result};

/// Output of [`segment_history`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub traces: Vec<Trace>,
    /// Records in segments shorter than `min_len`.
    pub discarded_records: usize,
    pub discarded_segments: usize,
}

/// Cuts a time-sorted history wherever consecutive records are more than
/// `delta_t` seconds apart and drops segments with fewer than `min_len`
/// records.
pub fn segment_history(records: &[SemanticRecord], delta_t: f64, min_len: usize) -> Segmentation {
    let mut out = Segmentation::default();
    let emit = |seg: &[SemanticRecord], out: &mut Segmentation| {
        if seg.is_empty() {
            return;
        }
        if seg.len() >= min_len {
            out.traces.push(Trace::new(seg.to_vec()));
        } else {
            out.discarded_records += seg.len();
            out.discarded_segments += 1;
        }
    };
    let mut start = 0;
    for i in 1..records.len() {
        if records[i].t_abs - records[i - 1].t_abs > delta_t {
            emit(&records[start..i], &mut out);
            start = i;
        }
    }
    emit(&records[start..], &mut out);
    out
}

/// Shuffles traces with `seed` and puts the first `⌊frac·n⌋` into the
/// training set.
pub fn split_corpus(mut traces: Vec<Trace>, train_frac: f64, seed: u64) -> Result<(Vec<Trace>, Vec<Trace>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let n_train = (train_frac * traces.len() as f64 + 1e-9).floor() as usize;
    traces.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = traces.split_off(n_train);
    Ok((traces, test))
}
