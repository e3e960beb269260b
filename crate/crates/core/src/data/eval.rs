use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CandidatePool, SemanticRecord, Trace};
use crate::error::{Error, Result};

/// Anything that can score candidate next records given a trace prefix.
/// Higher is better.
pub trait CandidateScorer: Sync {
    fn score_candidates(&self, history: &[SemanticRecord], candidates: &[SemanticRecord]) -> Result<Vec<f64>>;
}

/// Candidate indices ordered by descending score. Ties keep input order;
/// NaN ranks last.
pub fn rank_candidates(scores: &[f64]) -> Vec<usize> {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub k: usize,
    pub hits: usize,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).map(|r| r.accuracy)
    }
}

/// Fraction of test traces whose held-out final record lands in the top K
/// of its pool, for each K in `ks`.
pub fn evaluate_prediction<S: CandidateScorer + ?Sized>(
    scorer: &S,
    tests: &[Trace],
    pools: &[CandidatePool],
    ks: &[usize],
) -> Result<AccuracyTable> {
    if tests.len() != pools.len() {
        return Err(Error::DimensionMismatch {
            expected: tests.len(),
            found: pools.len(),
        });
    }
    if tests.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ranks: Vec<usize> = tests
        .par_iter()
        .zip(pools.par_iter())
        .map(|(trace, pool)| {
            let (history, _) = trace
                .split_last()
                .ok_or_else(|| Error::domain("empty test trace"))?;
            let scores = scorer.score_candidates(history, &pool.candidates)?;
            if scores.len() != pool.len() {
                return Err(Error::DimensionMismatch {
                    expected: pool.len(),
                    found: scores.len(),
                });
            }
            Ok(rank_candidates(&scores)
                .iter()
                .position(|&i| i == pool.truth_index)
                .expect("truth index is within the pool"))
        })
        .collect::<Result<_>>()?;
    let n = ranks.len();
    let rows = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r < k).count();
            AccuracyRow {
                k,
                hits,
                n,
                accuracy: hits as f64 / n as f64,
            }
        })
        .collect();
    Ok(AccuracyTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_is_stable() {
        assert_eq!(rank_candidates(&[1.0, 3.0, 3.0, f64::NAN, 2.0]), vec![1, 2, 4, 0, 3]);
        assert!(rank_candidates(&[]).is_empty());
    }

    struct Hashed(u64);

    impl CandidateScorer for Hashed {
        fn score_candidates(&self, history: &[SemanticRecord], c: &[SemanticRecord]) -> Result<Vec<f64>> {
            // Deterministic per-trace random scores.
            let mut rng = ChaCha8Rng::seed_from_u64(self.0 ^ history[0].t_abs.to_bits());
            Ok(c.iter().map(|_| rng.gen()).collect())
        }
    }

    fn synthetic(n: usize, size: usize) -> (Vec<Trace>, Vec<CandidatePool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rec = |t: f64| SemanticRecord {
            user_id: "u".into(),
            t_abs: t,
            t_day: 0.0,
            loc: [0.0, 0.0],
            embedding: vec![1.0, 0.0],
            raw_text: None,
        };
        let tests = (0..n).map(|i| Trace::new(vec![rec(i as f64), rec(i as f64 + 1.0)])).collect();
        let pools = (0..n)
            .map(|_| CandidatePool {
                truth_index: rng.gen_range(0..size),
                candidates: (0..size).map(|j| rec(j as f64)).collect(),
                insufficient_negatives: false,
            })
            .collect();
        (tests, pools)
    }

    #[test]
    fn full_pool_is_always_a_hit() {
        let (tests, pools) = synthetic(100, 10);
        let table = evaluate_prediction(&Hashed(1), &tests, &pools, &[10, 20]).unwrap();
        assert_eq!(table.at(10), Some(1.0));
        assert_eq!(table.at(20), Some(1.0));
    }

    #[test]
    fn null_scorer_is_chance() {
        let (tests, pools) = synthetic(10_000, 10);
        let table = evaluate_prediction(&Hashed(7), &tests, &pools, &[1, 5]).unwrap();
        assert!((table.at(1).unwrap() - 0.1).abs() < 0.02);
        assert!((table.at(5).unwrap() - 0.5).abs() < 0.03);
    }

    #[test]
    fn misaligned_pools() {
        let (tests, pools) = synthetic(3, 4);
        assert!(evaluate_prediction(&Hashed(0), &tests, &pools[..2], &[1]).is_err());
    }
}
