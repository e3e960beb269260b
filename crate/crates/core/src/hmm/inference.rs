use serde::{Deserialize, Serialize};

use super::{log_sum_exp, CompiledModel, ShmmModel};
use crate::data::{rank_candidates, CandidateScorer, SemanticRecord};
use crate::error::{Error, Result};

/// E-step quantities of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// `R×K` state responsibilities; rows sum to 1.
    pub gamma: Vec<Vec<f64>>,
    /// `K×K` expected transition counts summed over the trace.
    pub xi_sum: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// Log forward and backward lattices together with the emission matrix.
pub(crate) struct Lattice {
    pub log_b: Vec<Vec<f64>>,
    pub log_alpha: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

fn ensure_nonempty(records: &[SemanticRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::EmptyInput)
    } else {
        Ok(())
    }
}

/// `log α`: `α_i(z) = p(x_1..x_i, z_i = z)`.
pub(crate) fn forward_lattice(cm: &CompiledModel, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = cm.n_states();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(log_b.len());
    alpha.push((0..k).map(|z| cm.log_pi[z] + log_b[0][z]).collect());
    let mut buf = vec![0.0; k];
    for b in &log_b[1..] {
        let prev = alpha.last().expect("non-empty");
        let row = (0..k)
            .map(|z| {
                for (j, v) in buf.iter_mut().enumerate() {
                    *v = prev[j] + cm.log_trans[j][z];
                }
                log_sum_exp(buf.iter().copied()) + b[z]
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

fn backward_lattice(cm: &CompiledModel, log_b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = cm.n_states();
    let r = log_b.len();
    let mut beta = vec![vec![0.0; k]; r];
    let mut buf = vec![0.0; k];
    for i in (0..r - 1).rev() {
        for z in 0..k {
            for (j, v) in buf.iter_mut().enumerate() {
                *v = cm.log_trans[z][j] + log_b[i + 1][j] + beta[i + 1][j];
            }
            beta[i][z] = log_sum_exp(buf.iter().copied());
        }
    }
    beta
}

pub(crate) fn lattice(cm: &CompiledModel, records: &[SemanticRecord]) -> Result<Lattice> {
    ensure_nonempty(records)?;
    let log_b = cm.emission_matrix(records)?;
    let log_alpha = forward_lattice(cm, &log_b);
    let log_likelihood = log_sum_exp(log_alpha.last().expect("non-empty").iter().copied());
    if !log_likelihood.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    let log_beta = backward_lattice(cm, &log_b);
    Ok(Lattice {
        log_b,
        log_alpha,
        log_beta,
        log_likelihood,
    })
}

/// Normalized `exp` of a log-weight vector.
fn softmax(xs: &mut [f64]) {
    let lse = log_sum_exp(xs.iter().copied());
    xs.iter_mut().for_each(|x| *x = (*x - lse).exp());
}

pub(crate) fn posterior_compiled(cm: &CompiledModel, records: &[SemanticRecord]) -> Result<Posterior> {
    Ok(posterior_from_lattice(cm, &lattice(cm, records)?))
}

pub(crate) fn posterior_from_lattice(cm: &CompiledModel, lat: &Lattice) -> Posterior {
    let k = cm.n_states();
    let gamma = lat
        .log_alpha
        .iter()
        .zip(&lat.log_beta)
        .map(|(a, b)| {
            let mut row: Vec<f64> = a.iter().zip(b).map(|(a, b)| a + b).collect();
            softmax(&mut row);
            row
        })
        .collect();
    let mut xi_sum = vec![vec![0.0; k]; k];
    let mut slot = vec![0.0; k * k];
    for i in 0..lat.log_b.len() - 1 {
        fill_xi_slot(cm, lat, i, &mut slot);
        for (j, row) in xi_sum.iter_mut().enumerate() {
            for (z, x) in row.iter_mut().enumerate() {
                *x += slot[j * k + z];
            }
        }
    }
    Posterior {
        gamma,
        xi_sum,
        log_likelihood: lat.log_likelihood,
    }
}

/// Posterior over `(z_i, z_{i+1})`, flattened row-major.
fn fill_xi_slot(cm: &CompiledModel, lat: &Lattice, i: usize, slot: &mut [f64]) {
    let k = cm.n_states();
    for j in 0..k {
        for z in 0..k {
            slot[j * k + z] =
                lat.log_alpha[i][j] + cm.log_trans[j][z] + lat.log_b[i + 1][z] + lat.log_beta[i + 1][z];
        }
    }
    softmax(slot);
}

/// Responsibilities, expected transition counts and `log p(trace)`.
pub fn forward_backward(model: &ShmmModel, records: &[SemanticRecord]) -> Result<Posterior> {
    posterior_compiled(&model.compile()?, records)
}

/// `log p(trace | model)` by the forward recursion alone.
pub fn log_likelihood(model: &ShmmModel, records: &[SemanticRecord]) -> Result<f64> {
    let cm = model.compile()?;
    forward_log_likelihood(&cm, records)
}

pub(crate) fn forward_log_likelihood(cm: &CompiledModel, records: &[SemanticRecord]) -> Result<f64> {
    ensure_nonempty(records)?;
    let log_b = cm.emission_matrix(records)?;
    let ll = log_sum_exp(forward_lattice(cm, &log_b).last().expect("non-empty").iter().copied());
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::NonFiniteLikelihood)
    }
}

/// Per-slot transition posteriors `ξ_i(z, z')` for `i = 0..R-1`.
pub fn transition_posteriors(model: &ShmmModel, records: &[SemanticRecord]) -> Result<Vec<Vec<Vec<f64>>>> {
    let cm = model.compile()?;
    let lat = lattice(&cm, records)?;
    let k = cm.n_states();
    let mut slot = vec![0.0; k * k];
    Ok((0..records.len() - 1)
        .map(|i| {
            fill_xi_slot(&cm, &lat, i, &mut slot);
            slot.chunks(k).map(<[f64]>::to_vec).collect()
        })
        .collect())
}

/// Most probable state path and its joint log-probability. Ties go to the
/// lowest state index.
pub fn viterbi(model: &ShmmModel, records: &[SemanticRecord]) -> Result<(Vec<usize>, f64)> {
    ensure_nonempty(records)?;
    let cm = model.compile()?;
    let log_b = cm.emission_matrix(records)?;
    let k = cm.n_states();
    let r = records.len();
    let mut delta: Vec<f64> = (0..k).map(|z| cm.log_pi[z] + log_b[0][z]).collect();
    let mut back = vec![vec![0usize; k]; r];
    for i in 1..r {
        let next: Vec<f64> = (0..k)
            .map(|z| {
                let (arg, best) = argmax((0..k).map(|j| delta[j] + cm.log_trans[j][z]));
                back[i][z] = arg;
                best + log_b[i][z]
            })
            .collect();
        delta = next;
    }
    let (mut z, best) = argmax(delta.iter().copied());
    if !best.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    let mut path = vec![0; r];
    for i in (0..r).rev() {
        path[i] = z;
        z = back[i][z];
    }
    Ok((path, best))
}

/// First index of the maximum.
fn argmax(xs: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub index: usize,
    pub score: f64,
}

impl CompiledModel {
    /// Log predictive weight of each state for the record following `prefix`,
    /// jointly with the prefix: `log Σ_z α_R(z) A(z, z')`.
    pub fn next_state_log_weights(&self, prefix: &[SemanticRecord]) -> Result<Vec<f64>> {
        ensure_nonempty(prefix)?;
        let log_b = self.emission_matrix(prefix)?;
        let alpha = forward_lattice(self, &log_b);
        let last = alpha.last().expect("non-empty");
        let k = self.n_states();
        Ok((0..k)
            .map(|z| log_sum_exp((0..k).map(|j| last[j] + self.log_trans[j][z])))
            .collect())
    }

    /// `log p(prefix, c)` for each candidate `c` as the next record.
    pub fn next_scores(&self, prefix: &[SemanticRecord], candidates: &[SemanticRecord]) -> Result<Vec<f64>> {
        let w = self.next_state_log_weights(prefix)?;
        candidates
            .iter()
            .map(|c| {
                let b = self.log_emissions(c)?;
                Ok(log_sum_exp(w.iter().zip(&b).map(|(w, b)| w + b)))
            })
            .collect()
    }
}

/// Candidates ranked by `log p(prefix, c)`, best first, truncated to
/// `k_top`. Ties keep candidate order.
pub fn score_next(
    model: &ShmmModel,
    prefix: &[SemanticRecord],
    candidates: &[SemanticRecord],
    k_top: usize,
) -> Result<Vec<RankedCandidate>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scores = model.compile()?.next_scores(prefix, candidates)?;
    Ok(rank_candidates(&scores)
        .into_iter()
        .take(k_top)
        .map(|index| RankedCandidate {
            index,
            score: scores[index],
        })
        .collect())
}

impl CandidateScorer for CompiledModel {
    fn score_candidates(&self, history: &[SemanticRecord], candidates: &[SemanticRecord]) -> Result<Vec<f64>> {
        self.next_scores(history, candidates)
    }
}

impl CandidateScorer for ShmmModel {
    fn score_candidates(&self, history: &[SemanticRecord], candidates: &[SemanticRecord]) -> Result<Vec<f64>> {
        self.compile()?.next_scores(history, candidates)
    }
}
