//! Hidden Markov machinery over semantic traces: log-space forward-backward,
//! Viterbi decoding, one-step-ahead scoring and multi-trace Baum-Welch.

mod inference;
mod io;
mod train;

use serde::{Deserialize, Serialize};

use crate::data::SemanticRecord;
use crate::emission::{check_record, CompiledState, EmissionConfig, StateParams, TextParams};
use crate::error::{Error, Result};

pub use inference::{
    forward_backward, log_likelihood, score_next, transition_posteriors, viterbi, Posterior,
    RankedCandidate,
};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT_VERSION};
pub use train::{
    baum_welch, kmeans_pp, BaumWelchOptions, EmIteration, InitStrategy, TrainedModel,
    PROB_FLOOR,
};

/// Tolerance on the stochastic constraints of `pi` and `trans`.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShmmModel {
    pub n_states: usize,
    pub pi: Vec<f64>,
    /// Row-major `K×K`; `trans[i][j] = P(z' = j | z = i)`.
    pub trans: Vec<Vec<f64>>,
    pub states: Vec<StateParams>,
    pub config: EmissionConfig,
    pub embedding_dim: usize,
}

impl ShmmModel {
    pub fn new(
        pi: Vec<f64>,
        trans: Vec<Vec<f64>>,
        states: Vec<StateParams>,
        config: EmissionConfig,
        embedding_dim: usize,
    ) -> Result<Self> {
        let model = ShmmModel {
            n_states: states.len(),
            pi,
            trans,
            states,
            config,
            embedding_dim,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states;
        if k == 0 {
            return Err(Error::Config("model needs at least one state".into()));
        }
        self.config.validate()?;
        if self.pi.len() != k || self.trans.len() != k || self.states.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.pi.len().min(self.trans.len()).min(self.states.len()),
            });
        }
        check_distribution(&self.pi, "initial distribution")?;
        for row in &self.trans {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: row.len(),
                });
            }
            check_distribution(row, "transition row")?;
        }
        for s in &self.states {
            let dim = match &s.text {
                TextParams::Vmf(p) => Some(p.dim()),
                TextParams::DiagGaussian { mean, .. } => Some(mean.len()),
                TextParams::None => None,
            };
            if let Some(d) = dim {
                if d != self.embedding_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.embedding_dim,
                        found: d,
                    });
                }
            }
            CompiledState::new(s, &self.config)?;
        }
        Ok(())
    }

    /// Per-state evaluators, for repeated emission scoring.
    pub fn compile(&self) -> Result<CompiledModel> {
        let states = self
            .states
            .iter()
            .map(|s| CompiledState::new(s, &self.config))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledModel {
            log_pi: self.pi.iter().map(|p| p.ln()).collect(),
            log_trans: self.trans.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect(),
            states,
            config: self.config,
            dim: self.embedding_dim,
        })
    }

    /// The same model with states reordered so that new state `i` is old
    /// state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_states;
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&i| i >= k || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::domain("not a permutation of the states"));
        }
        Ok(ShmmModel {
            n_states: k,
            pi: perm.iter().map(|&i| self.pi[i]).collect(),
            trans: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.trans[i][j]).collect())
                .collect(),
            states: perm.iter().map(|&i| self.states[i].clone()).collect(),
            config: self.config,
            embedding_dim: self.embedding_dim,
        })
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::domain(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Log-parameters and compiled emissions of a model.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub log_pi: Vec<f64>,
    pub log_trans: Vec<Vec<f64>>,
    pub states: Vec<CompiledState>,
    pub config: EmissionConfig,
    pub dim: usize,
}

impl CompiledModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// `log p(record | z)` for every state.
    pub fn log_emissions(&self, record: &SemanticRecord) -> Result<Vec<f64>> {
        check_record(record, &self.config, self.dim)?;
        Ok(self.states.iter().map(|s| s.log_density(record)).collect())
    }

    /// Emission log-densities of every record, `R×K`.
    pub fn emission_matrix(&self, records: &[SemanticRecord]) -> Result<Vec<Vec<f64>>> {
        records.iter().map(|r| self.log_emissions(r)).collect()
    }
}

/// `log Σ exp(xs)`, with `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || !m.is_finite() {
        return m;
    }
    m + xs.into_iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
