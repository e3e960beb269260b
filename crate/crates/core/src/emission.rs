//! Per-state emission densities. Time, location and message embedding are
//! conditionally independent given the state, so the log-density is a sum of
//! per-modality terms; disabled modalities contribute nothing.
//!
//! The presets reproduce the baseline models: `hmm` (location only),
//! `st_hmm` (location and time), `ghmm` (independent Gaussians on the
//! embedding coordinates) and the full `shmm` (vMF on the embedding).

use serde::{Deserialize, Serialize};

use crate::data::SemanticRecord;
use crate::error::{Error, Result};
use crate::vmf::{self, KappaSolverOptions, VmfParams};

/// Minimum standard deviation of the time-of-day Gaussian, in seconds.
pub const SIGMA_T_FLOOR: f64 = 60.0;
/// Minimum eigenvalue of the location covariance (and per-coordinate
/// variance of the diagonal text Gaussian).
pub const VAR_FLOOR: f64 = 1e-6;
/// Responsibility mass below which a state is considered empty.
pub const MIN_STATE_MASS: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextModel {
    Vmf,
    DiagGaussian,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionConfig {
    pub use_time: bool,
    pub use_location: bool,
    pub text_model: TextModel,
    #[serde(default = "default_sigma_t_floor")]
    pub sigma_t_floor: f64,
    #[serde(default = "default_var_floor")]
    pub var_floor: f64,
}

fn default_sigma_t_floor() -> f64 {
    SIGMA_T_FLOOR
}

fn default_var_floor() -> f64 {
    VAR_FLOOR
}

impl EmissionConfig {
    fn with(use_time: bool, use_location: bool, text_model: TextModel) -> Self {
        EmissionConfig {
            use_time,
            use_location,
            text_model,
            sigma_t_floor: SIGMA_T_FLOOR,
            var_floor: VAR_FLOOR,
        }
    }

    pub fn shmm() -> Self {
        Self::with(true, true, TextModel::Vmf)
    }

    pub fn ghmm() -> Self {
        Self::with(true, true, TextModel::DiagGaussian)
    }

    pub fn st_hmm() -> Self {
        Self::with(true, true, TextModel::None)
    }

    pub fn hmm() -> Self {
        Self::with(false, true, TextModel::None)
    }

    pub fn time_only() -> Self {
        Self::with(true, false, TextModel::None)
    }

    pub fn text_only(text_model: TextModel) -> Self {
        Self::with(false, false, text_model)
    }

    /// Looks up a preset by name: `shmm`, `ghmm`, `st-hmm`, `hmm`.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "shmm" => Ok(Self::shmm()),
            "ghmm" => Ok(Self::ghmm()),
            "st-hmm" | "sthmm" => Ok(Self::st_hmm()),
            "hmm" => Ok(Self::hmm()),
            other => Err(Error::Config(format!("unknown emission preset '{other}'"))),
        }
    }

    pub fn uses_text(&self) -> bool {
        self.text_model != TextModel::None
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_time && !self.use_location && !self.uses_text() {
            return Err(Error::Config("at least one modality must be enabled".into()));
        }
        if !(self.sigma_t_floor > 0.0) || !(self.var_floor > 0.0) {
            return Err(Error::Config("variance floors must be positive".into()));
        }
        Ok(())
    }
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self::shmm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextParams {
    Vmf(VmfParams),
    DiagGaussian { mean: Vec<f64>, var: Vec<f64> },
    None,
}

impl TextParams {
    pub fn vmf(&self) -> Option<&VmfParams> {
        match self {
            TextParams::Vmf(p) => Some(p),
            _ => None,
        }
    }
}

/// Emission parameters of one latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    /// Mean time of day, seconds.
    pub mu_t: f64,
    /// Standard deviation of time of day, seconds.
    pub sigma_t: f64,
    pub mu_l: [f64; 2],
    pub sigma_l: [[f64; 2]; 2],
    pub text: TextParams,
}

/// A state with its normalizers and inverse covariance precomputed.
#[derive(Debug, Clone)]
pub struct CompiledState {
    config: EmissionConfig,
    mu_t: f64,
    inv_var_t: f64,
    log_norm_t: f64,
    mu_l: [f64; 2],
    prec_l: [f64; 3],
    log_norm_l: f64,
    text: CompiledText,
}

#[derive(Debug, Clone)]
enum CompiledText {
    Vmf { mu: Vec<f64>, kappa: f64, log_c: f64 },
    Diag { mean: Vec<f64>, inv_var: Vec<f64>, log_norm: f64 },
    None,
}

impl CompiledState {
    pub fn new(state: &StateParams, config: &EmissionConfig) -> Result<Self> {
        if !(state.sigma_t > 0.0) || !state.mu_t.is_finite() {
            return Err(Error::domain("time Gaussian needs finite mean and positive SD"));
        }
        let [[a, b], [b2, d]] = state.sigma_l;
        let b = 0.5 * (b + b2);
        let det = a * d - b * b;
        if !(det > 0.0) || !(a > 0.0) || !state.mu_l.iter().all(|x| x.is_finite()) {
            return Err(Error::domain("location covariance must be positive definite"));
        }
        let text = match (&state.text, config.text_model) {
            (TextParams::Vmf(p), TextModel::Vmf) => CompiledText::Vmf {
                mu: p.mu.clone(),
                kappa: p.kappa,
                log_c: p.log_normalizer()?,
            },
            (TextParams::DiagGaussian { mean, var }, TextModel::DiagGaussian) => {
                if mean.len() != var.len() || var.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::domain("diagonal text Gaussian needs positive variances"));
                }
                CompiledText::Diag {
                    mean: mean.clone(),
                    inv_var: var.iter().map(|v| 1.0 / v).collect(),
                    log_norm: -0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>(),
                }
            }
            (_, TextModel::None) => CompiledText::None,
            _ => {
                return Err(Error::Config(
                    "state text parameters do not match the configured text model".into(),
                ))
            }
        };
        Ok(CompiledState {
            config: *config,
            mu_t: state.mu_t,
            inv_var_t: 1.0 / (state.sigma_t * state.sigma_t),
            log_norm_t: -0.5 * LN_2PI - state.sigma_t.ln(),
            mu_l: state.mu_l,
            prec_l: [d / det, -b / det, a / det],
            log_norm_l: -LN_2PI - 0.5 * det.ln(),
            text,
        })
    }

    pub fn log_time(&self, t_day: f64) -> f64 {
        let z = t_day - self.mu_t;
        self.log_norm_t - 0.5 * z * z * self.inv_var_t
    }

    pub fn log_location(&self, loc: [f64; 2]) -> f64 {
        let dx = loc[0] - self.mu_l[0];
        let dy = loc[1] - self.mu_l[1];
        let [paa, pab, pbb] = self.prec_l;
        self.log_norm_l - 0.5 * (paa * dx * dx + 2.0 * pab * dx * dy + pbb * dy * dy)
    }

    pub fn log_text(&self, m: &[f64]) -> f64 {
        match &self.text {
            CompiledText::Vmf { mu, kappa, log_c } => log_c + kappa * vmf::dot(mu, m),
            CompiledText::Diag {
                mean,
                inv_var,
                log_norm,
            } => {
                let q: f64 = m
                    .iter()
                    .zip(mean)
                    .zip(inv_var)
                    .map(|((x, mu), iv)| (x - mu) * (x - mu) * iv)
                    .sum();
                log_norm - 0.5 * q
            }
            CompiledText::None => 0.0,
        }
    }

    /// Sum of the enabled per-modality log-densities. Assumes the record was
    /// validated with [`check_record`].
    pub fn log_density(&self, record: &SemanticRecord) -> f64 {
        let mut total = 0.0;
        if self.config.use_time {
            total += self.log_time(record.t_day);
        }
        if self.config.use_location {
            total += self.log_location(record.loc);
        }
        total + self.log_text(&record.embedding)
    }
}

/// Checks that every enabled modality of `record` is finite and that the
/// embedding has dimension `dim`.
pub fn check_record(record: &SemanticRecord, config: &EmissionConfig, dim: usize) -> Result<()> {
    if config.use_time && !record.t_day.is_finite() {
        return Err(Error::domain("non-finite time of day"));
    }
    if config.use_location && !record.loc.iter().all(|x| x.is_finite()) {
        return Err(Error::domain("non-finite location"));
    }
    if config.uses_text() {
        if record.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: record.embedding.len(),
            });
        }
        if !record.embedding.iter().all(|x| x.is_finite()) {
            return Err(Error::domain("non-finite embedding"));
        }
    }
    Ok(())
}

/// `log p(record | state)` under `config`.
pub fn log_emission(
    state: &StateParams,
    config: &EmissionConfig,
    record: &SemanticRecord,
) -> Result<f64> {
    let dim = match &state.text {
        TextParams::Vmf(p) => p.dim(),
        TextParams::DiagGaussian { mean, .. } => mean.len(),
        TextParams::None => record.embedding.len(),
    };
    check_record(record, config, dim)?;
    if config.text_model == TextModel::Vmf {
        let norm = vmf::l2_norm(&record.embedding);
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("embedding must be unit length, norm = {norm}")));
        }
    }
    let value = CompiledState::new(state, config)?.log_density(record);
    if !value.is_finite() {
        return Err(Error::domain("non-finite emission log-density"));
    }
    Ok(value)
}

/// Weighted maximum-likelihood parameters for one state.
///
/// `weights[i]` is the responsibility of this state for `records[i]`. The
/// time SD is floored at `sigma_t_floor` and the location covariance's
/// eigenvalues at `var_floor`.
pub fn m_step_state(
    records: &[&SemanticRecord],
    weights: &[f64],
    config: &EmissionConfig,
    dim: usize,
) -> Result<StateParams> {
    m_step_state_with(records, weights, config, dim, KappaSolverOptions::default())
}

pub fn m_step_state_with(
    records: &[&SemanticRecord],
    weights: &[f64],
    config: &EmissionConfig,
    dim: usize,
    kappa_opts: KappaSolverOptions,
) -> Result<StateParams> {
    if records.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            found: weights.len(),
        });
    }
    let mass: f64 = weights.iter().sum();
    if !(mass >= MIN_STATE_MASS) {
        return Err(Error::EmptyState { mass });
    }
    // Shift by the weighted means so the second moments are centred.
    let mut shift_t = 0.0;
    let mut shift_l = [0.0; 2];
    for (r, &w) in records.iter().zip(weights) {
        shift_t += w * r.t_day;
        shift_l[0] += w * r.loc[0];
        shift_l[1] += w * r.loc[1];
    }
    let mut acc = StateAccumulator::new(
        shift_t / mass,
        [shift_l[0] / mass, shift_l[1] / mass],
        config.text_model,
        dim,
    );
    for (r, &w) in records.iter().zip(weights) {
        if w > 0.0 {
            if config.uses_text() && r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            acc.push(r, w);
        }
    }
    acc.finish(config, kappa_opts)
}

#[derive(Debug, Clone, PartialEq)]
enum TextAccumulator {
    Vmf(vmf::ResultantStats),
    Diag { sum: Vec<f64>, sum_sq: Vec<f64> },
    None,
}

/// Weighted sufficient statistics for one state's M-step.
///
/// Time and location moments are taken about a fixed shift, ideally close to
/// the eventual mean, so that the covariance does not suffer cancellation.
/// Accumulators with the same shift can be merged.
#[derive(Debug, Clone, PartialEq)]
pub struct StateAccumulator {
    shift_t: f64,
    shift_l: [f64; 2],
    weight: f64,
    s_t: f64,
    s_tt: f64,
    s_l: [f64; 2],
    s_ll: [f64; 3],
    text: TextAccumulator,
}

impl StateAccumulator {
    pub fn new(shift_t: f64, shift_l: [f64; 2], text_model: TextModel, dim: usize) -> Self {
        let text = match text_model {
            TextModel::Vmf => TextAccumulator::Vmf(vmf::ResultantStats::new(dim)),
            TextModel::DiagGaussian => TextAccumulator::Diag {
                sum: vec![0.0; dim],
                sum_sq: vec![0.0; dim],
            },
            TextModel::None => TextAccumulator::None,
        };
        StateAccumulator {
            shift_t,
            shift_l,
            weight: 0.0,
            s_t: 0.0,
            s_tt: 0.0,
            s_l: [0.0; 2],
            s_ll: [0.0; 3],
            text,
        }
    }

    /// An empty accumulator with the same shift and text layout.
    pub fn empty_like(&self) -> Self {
        let mut out = self.clone();
        out.weight = 0.0;
        out.s_t = 0.0;
        out.s_tt = 0.0;
        out.s_l = [0.0; 2];
        out.s_ll = [0.0; 3];
        match &mut out.text {
            TextAccumulator::Vmf(s) => *s = vmf::ResultantStats::new(s.dim()),
            TextAccumulator::Diag { sum, sum_sq } => {
                sum.iter_mut().for_each(|x| *x = 0.0);
                sum_sq.iter_mut().for_each(|x| *x = 0.0);
            }
            TextAccumulator::None => {}
        }
        out
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Adds `record` with weight `w`. The embedding length must match.
    pub fn push(&mut self, record: &SemanticRecord, w: f64) {
        let dt = record.t_day - self.shift_t;
        let dx = record.loc[0] - self.shift_l[0];
        let dy = record.loc[1] - self.shift_l[1];
        self.weight += w;
        self.s_t += w * dt;
        self.s_tt += w * dt * dt;
        self.s_l[0] += w * dx;
        self.s_l[1] += w * dy;
        self.s_ll[0] += w * dx * dx;
        self.s_ll[1] += w * dx * dy;
        self.s_ll[2] += w * dy * dy;
        match &mut self.text {
            TextAccumulator::Vmf(s) => s.push(&record.embedding, w),
            TextAccumulator::Diag { sum, sum_sq } => {
                for ((s, q), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&record.embedding) {
                    *s += w * x;
                    *q += w * x * x;
                }
            }
            TextAccumulator::None => {}
        }
    }

    pub fn merge(&mut self, other: &StateAccumulator) {
        debug_assert!(self.shift_t == other.shift_t && self.shift_l == other.shift_l);
        self.weight += other.weight;
        self.s_t += other.s_t;
        self.s_tt += other.s_tt;
        for i in 0..2 {
            self.s_l[i] += other.s_l[i];
        }
        for i in 0..3 {
            self.s_ll[i] += other.s_ll[i];
        }
        match (&mut self.text, &other.text) {
            (TextAccumulator::Vmf(a), TextAccumulator::Vmf(b)) => a.merge(b),
            (TextAccumulator::Diag { sum, sum_sq }, TextAccumulator::Diag { sum: s2, sum_sq: q2 }) => {
                sum.iter_mut().zip(s2).for_each(|(a, b)| *a += b);
                sum_sq.iter_mut().zip(q2).for_each(|(a, b)| *a += b);
            }
            _ => {}
        }
    }

    /// Weighted maximum-likelihood parameters with floors applied.
    pub fn finish(&self, config: &EmissionConfig, kappa_opts: KappaSolverOptions) -> Result<StateParams> {
        let mass = self.weight;
        if !(mass >= MIN_STATE_MASS) {
            return Err(Error::EmptyState { mass });
        }
        let dt = self.s_t / mass;
        let dl = [self.s_l[0] / mass, self.s_l[1] / mass];
        let var_t = (self.s_tt / mass - dt * dt).max(0.0);
        let cov = [
            self.s_ll[0] / mass - dl[0] * dl[0],
            self.s_ll[1] / mass - dl[0] * dl[1],
            self.s_ll[2] / mass - dl[1] * dl[1],
        ];
        let text = match &self.text {
            TextAccumulator::None => TextParams::None,
            TextAccumulator::Vmf(stats) => TextParams::Vmf(vmf::fit_from_stats(stats, kappa_opts)?.params),
            TextAccumulator::Diag { sum, sum_sq } => {
                let mean: Vec<f64> = sum.iter().map(|s| s / mass).collect();
                let var = sum_sq
                    .iter()
                    .zip(&mean)
                    .map(|(q, m)| (q / mass - m * m).max(config.var_floor))
                    .collect();
                TextParams::DiagGaussian { mean, var }
            }
        };
        Ok(StateParams {
            mu_t: self.shift_t + dt,
            sigma_t: var_t.sqrt().max(config.sigma_t_floor),
            mu_l: [self.shift_l[0] + dl[0], self.shift_l[1] + dl[1]],
            sigma_l: floor_covariance(cov, config.var_floor),
            text,
        })
    }
}

/// Clamps the eigenvalues of the symmetric matrix `[[a, b], [b, d]]` at `floor`.
pub fn floor_covariance([a, b, d]: [f64; 3], floor: f64) -> [[f64; 2]; 2] {
    let half_tr = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let disc = (half_diff * half_diff + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    if l2 >= floor {
        return [[a, b], [b, d]];
    }
    // Unit eigenvector for l1.
    let (c, s) = if disc == 0.0 {
        (1.0, 0.0)
    } else {
        let angle = 0.5 * (2.0 * b).atan2(a - d);
        (angle.cos(), angle.sin())
    };
    let e1 = l1.max(floor);
    let e2 = l2.max(floor);
    [
        [e1 * c * c + e2 * s * s, (e1 - e2) * c * s],
        [(e1 - e2) * c * s, e1 * s * s + e2 * c * c],
    ]
}

/// `log N(x | μ, σ²)` for a univariate Gaussian.
pub fn log_normal_1d(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}
