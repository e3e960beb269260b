//! Planted models, corpus generation, state alignment, and the synthetic
//! concentration-estimation experiments.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{SemanticRecord, Trace, SECONDS_PER_DAY};
use crate::emission::{EmissionConfig, StateParams, TextParams};
use crate::error::{Error, Result};
use crate::hmm::ShmmModel;
use crate::vmf::{self, uniform_sphere, KappaSolverOptions, ResultantStats, VmfParams, VmfSampler};

/// Centre of the synthetic city, `(lon, lat)` in degrees.
pub const ORIGIN: [f64; 2] = [-118.25, 34.05];

/// Recipe for a planted model.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    /// One concentration per state.
    pub kappas: Vec<f64>,
    pub dim: usize,
    /// All states share one location and time distribution.
    pub shared_space: bool,
    /// `Some(q)`: state `z` moves to `z+1 (mod K)` with probability `q`.
    /// `None`: random rows with a heavier diagonal.
    pub cycle: Option<f64>,
    pub seed: u64,
}

impl PlantedSpec {
    /// Five states in ten dimensions, separated in space, time and topic.
    pub fn recovery(seed: u64) -> Self {
        PlantedSpec {
            kappas: vec![10.0, 20.0, 50.0, 100.0, 200.0],
            dim: 10,
            shared_space: false,
            cycle: None,
            seed,
        }
    }

    /// States that overlap in space and time and differ only in topic.
    pub fn text_signal(k: usize, dim: usize, kappa: f64, seed: u64) -> Self {
        PlantedSpec {
            kappas: vec![kappa; k],
            dim,
            shared_space: true,
            cycle: Some(0.9),
            seed,
        }
    }

    pub fn build(&self) -> Result<ShmmModel> {
        let k = self.kappas.len();
        if k == 0 || self.dim < 2 {
            return Err(Error::Config("planted model needs states and dimension >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut states = Vec::with_capacity(k);
        for (z, &kappa) in self.kappas.iter().enumerate() {
            let mu = uniform_sphere(&mut rng, self.dim);
            let (mu_t, sigma_t, mu_l, var_l) = if self.shared_space {
                (12.0 * 3600.0, 3.0 * 3600.0, ORIGIN, 1e-4)
            } else {
                let angle = 2.0 * std::f64::consts::PI * z as f64 / k as f64;
                (
                    (4.0 + 16.0 * z as f64 / k as f64) * 3600.0,
                    3600.0,
                    [ORIGIN[0] + 0.05 * angle.cos(), ORIGIN[1] + 0.05 * angle.sin()],
                    2.5e-5,
                )
            };
            states.push(StateParams {
                mu_t,
                sigma_t,
                mu_l,
                sigma_l: [[var_l, 0.2 * var_l], [0.2 * var_l, var_l]],
                text: TextParams::Vmf(VmfParams::new(mu, kappa)?),
            });
        }
        let trans: Vec<Vec<f64>> = (0..k)
            .map(|z| match self.cycle {
                _ if k == 1 => vec![1.0],
                Some(q) => (0..k)
                    .map(|j| if j == (z + 1) % k { q } else { (1.0 - q) / (k - 1) as f64 })
                    .collect(),
                None => {
                    let row: Vec<f64> = (0..k)
                        .map(|j| rng.gen_range(0.1..1.0) + if j == z { 2.0 } else { 0.0 })
                        .collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|x| x / s).collect()
                }
            })
            .collect();
        let pi = vec![1.0 / k as f64; k];
        ShmmModel::new(pi, trans, states, EmissionConfig::shmm(), self.dim)
    }
}

/// Generated traces together with their hidden state paths.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub traces: Vec<Trace>,
    pub paths: Vec<Vec<usize>>,
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct StateSampler {
    mu_t: f64,
    sigma_t: f64,
    mu_l: [f64; 2],
    chol: [f64; 3],
    text: TextSampler,
}

enum TextSampler {
    Vmf(VmfSampler),
    Diag { mean: Vec<f64>, sd: Vec<f64> },
    Uniform(usize),
}

impl StateSampler {
    fn new(s: &StateParams, dim: usize) -> Result<Self> {
        let [[a, b], [_, d]] = s.sigma_l;
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).sqrt();
        let text = match &s.text {
            TextParams::Vmf(p) => TextSampler::Vmf(VmfSampler::new(p)?),
            TextParams::DiagGaussian { mean, var } => TextSampler::Diag {
                mean: mean.clone(),
                sd: var.iter().map(|v| v.sqrt()).collect(),
            },
            TextParams::None => TextSampler::Uniform(dim),
        };
        Ok(StateSampler {
            mu_t: s.mu_t,
            sigma_t: s.sigma_t,
            mu_l: s.mu_l,
            chol: [l11, l21, l22],
            text,
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (f64, [f64; 2], Vec<f64>) {
        let n = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        // Truncated to one day by resampling; means sit well inside the day.
        let t = loop {
            let t = self.mu_t + self.sigma_t * n(rng);
            if (0.0..SECONDS_PER_DAY).contains(&t) {
                break t;
            }
        };
        let (z1, z2) = (n(rng), n(rng));
        let [l11, l21, l22] = self.chol;
        let loc = [self.mu_l[0] + l11 * z1, self.mu_l[1] + l21 * z1 + l22 * z2];
        let m = match &self.text {
            TextSampler::Vmf(s) => s.draw(rng),
            TextSampler::Diag { mean, sd } => {
                let v: Vec<f64> = mean.iter().zip(sd).map(|(m, s)| m + s * n(rng)).collect();
                let norm = vmf::l2_norm(&v);
                v.into_iter().map(|x| x / norm).collect()
            }
            TextSampler::Uniform(d) => uniform_sphere(rng, *d),
        };
        (t, loc, m)
    }
}

/// Simulates `n_traces` traces of `len` records from `model`.
///
/// Consecutive records are 10 minutes apart in absolute time; time of day
/// is drawn from the state's Gaussian, truncated to `[0, 86400)`,
/// independently of it.
pub fn sample_corpus(model: &ShmmModel, n_traces: usize, len: usize, seed: u64) -> Result<PlantedCorpus> {
    if len == 0 {
        return Err(Error::Config("trace length must be positive".into()));
    }
    let samplers = model
        .states
        .iter()
        .map(|s| StateSampler::new(s, model.embedding_dim))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(n_traces);
    let mut paths = Vec::with_capacity(n_traces);
    for i in 0..n_traces {
        let mut z = sample_index(&mut rng, &model.pi);
        let mut path = Vec::with_capacity(len);
        let mut records = Vec::with_capacity(len);
        for r in 0..len {
            if r > 0 {
                z = sample_index(&mut rng, &model.trans[z]);
            }
            let (t_day, loc, embedding) = samplers[z].draw(&mut rng);
            records.push(SemanticRecord {
                user_id: format!("user{i:06}"),
                t_abs: 1e6 * i as f64 + 600.0 * r as f64,
                t_day,
                loc,
                embedding,
                raw_text: None,
            });
            path.push(z);
        }
        traces.push(Trace::new(records));
        paths.push(path);
    }
    Ok(PlantedCorpus { traces, paths })
}

/// Minimum-cost perfect matching of a square cost matrix; `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::domain("cost matrix must be square"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::domain("cost matrix must be finite"));
    }
    // Potentials-based shortest augmenting path, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Dissimilarity of two states: squared standardized mean distances plus
/// the cosine distance of the topic directions.
pub fn state_distance(a: &StateParams, b: &StateParams) -> f64 {
    let dt = (a.mu_t - b.mu_t) / a.sigma_t;
    let dx = (a.mu_l[0] - b.mu_l[0]) / a.sigma_l[0][0].sqrt();
    let dy = (a.mu_l[1] - b.mu_l[1]) / a.sigma_l[1][1].sqrt();
    let text = match (a.text.vmf(), b.text.vmf()) {
        (Some(x), Some(y)) => 1.0 - vmf::dot(&x.mu, &y.mu),
        _ => 0.0,
    };
    dt * dt + dx * dx + dy * dy + 100.0 * text
}

/// Permutation `perm` such that `estimate.permuted(&perm)` lines up with
/// `truth` state by state.
pub fn align_states(truth: &ShmmModel, estimate: &ShmmModel) -> Result<Vec<usize>> {
    if truth.n_states != estimate.n_states {
        return Err(Error::DimensionMismatch {
            expected: truth.n_states,
            found: estimate.n_states,
        });
    }
    let cost: Vec<Vec<f64>> = truth
        .states
        .iter()
        .map(|t| estimate.states.iter().map(|e| state_distance(t, e)).collect())
        .collect();
    hungarian(&cost)
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// One long-format result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub x: f64,
    pub metric: String,
    pub value: f64,
}

impl ExperimentRow {
    fn new(x: f64, metric: &str, value: f64) -> Self {
        ExperimentRow {
            x,
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn write_rows_csv<W: Write>(w: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    NewtonConvergence,
    EstimationVsN,
    EstimationVsKappa,
    EstimationVsP,
}

/// Parameters of the synthetic experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    pub p: usize,
    pub kappa: f64,
    pub n: usize,
    pub n_grid: Vec<usize>,
    pub kappa_grid: Vec<f64>,
    pub p_grid: Vec<usize>,
    /// Independent repetitions averaged per grid point.
    pub repeats: usize,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            p: 100,
            kappa: 100.0,
            n: 100_000,
            n_grid: vec![100, 1_000, 10_000, 100_000],
            kappa_grid: vec![10.0, 50.0, 100.0, 200.0, 500.0, 1000.0],
            p_grid: vec![10, 50, 100, 200, 300],
            repeats: 20,
        }
    }
}

fn mean_direction(p: usize, seed: u64) -> Vec<f64> {
    uniform_sphere(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15), p)
}

/// Sample of size `n`, reduced to its resultant.
fn sample_stats(params: &VmfParams, n: usize, seed: u64) -> Result<ResultantStats> {
    let sampler = VmfSampler::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = ResultantStats::new(params.dim());
    for _ in 0..n {
        stats.push(&sampler.draw(&mut rng), 1.0);
    }
    Ok(stats)
}

/// Relative κ error and `‖μ̂ − μ‖` of one estimation run.
fn estimation_errors(p: usize, kappa: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mu = mean_direction(p, seed);
    let params = VmfParams::new(mu.clone(), kappa)?;
    let stats = sample_stats(&params, n, seed)?;
    let fit = vmf::fit_from_stats(&stats, KappaSolverOptions::default())?;
    let mu_err = fit
        .params
        .mu
        .iter()
        .zip(&mu)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(((fit.params.kappa - kappa).abs() / kappa, mu_err))
}

fn averaged_rows(x: f64, p: usize, kappa: f64, n: usize, repeats: usize, seed: u64) -> Result<Vec<ExperimentRow>> {
    use rayon::prelude::*;
    let errs = (0..repeats as u64)
        .into_par_iter()
        .map(|r| estimation_errors(p, kappa, n, seed.wrapping_add(r.wrapping_mul(1_000_003))))
        .collect::<Result<Vec<_>>>()?;
    let m = repeats as f64;
    Ok(vec![
        ExperimentRow::new(x, "kappa_rel_error", errs.iter().map(|e| e.0).sum::<f64>() / m),
        ExperimentRow::new(x, "mu_error", errs.iter().map(|e| e.1).sum::<f64>() / m),
    ])
}

/// Runs one synthetic experiment and returns its `(x, metric, value)` rows.
pub fn run_experiment(exp: Experiment, params: &ExperimentParams, seed: u64) -> Result<Vec<ExperimentRow>> {
    if params.repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    match exp {
        Experiment::NewtonConvergence => newton_convergence(params.p, params.kappa, params.n, seed),
        Experiment::EstimationVsN => {
            check_grid(&params.n_grid, |&n| n >= 2)?;
            let mut rows = Vec::new();
            for &n in &params.n_grid {
                rows.extend(averaged_rows(n as f64, params.p, params.kappa, n, params.repeats, seed)?);
            }
            Ok(rows)
        }
        Experiment::EstimationVsKappa => {
            check_grid(&params.kappa_grid, |&k| k > 0.0 && k <= vmf::KAPPA_MAX)?;
            let mut rows = Vec::new();
            for &k in &params.kappa_grid {
                rows.extend(averaged_rows(k, params.p, k, params.n, params.repeats, seed)?);
            }
            Ok(rows)
        }
        Experiment::EstimationVsP => {
            check_grid(&params.p_grid, |&p| p >= 2)?;
            let mut rows = Vec::new();
            for &p in &params.p_grid {
                rows.extend(averaged_rows(p as f64, p, params.kappa, params.n, params.repeats, seed)?);
            }
            Ok(rows)
        }
    }
}

fn check_grid<T>(grid: &[T], ok: impl Fn(&T) -> bool) -> Result<()> {
    if grid.is_empty() || !grid.iter().all(ok) {
        return Err(Error::Config("invalid parameter grid".into()));
    }
    Ok(())
}

/// Residual `|A_p(κ_n) − r̄|` and iterate `κ_n` of the Newton solve on a
/// sample of size `n`; row 0 is the Banerjee starting point.
pub fn newton_convergence(p: usize, kappa: f64, n: usize, seed: u64) -> Result<Vec<ExperimentRow>> {
    if p < 2 || !(kappa > 0.0) || n == 0 {
        return Err(Error::Config("newton_convergence needs p >= 2, kappa > 0, n > 0".into()));
    }
    let params = VmfParams::new(mean_direction(p, seed), kappa)?;
    let stats = sample_stats(&params, n, seed)?;
    let est = vmf::estimate_kappa(&stats, KappaSolverOptions::default())?;
    let mut rows = Vec::new();
    for (i, it) in est.trace.iter().enumerate() {
        rows.push(ExperimentRow::new(i as f64, "residual", it.residual));
        rows.push(ExperimentRow::new(i as f64, "kappa", it.kappa));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.len()])
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=7 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
                let a = hungarian(&cost).unwrap();
                let mut seen = a.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                assert!((total - brute_force_assignment(&cost)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn planted_corpus_is_reproducible() {
        let model = PlantedSpec::recovery(3).build().unwrap();
        let a = sample_corpus(&model, 5, 7, 11).unwrap();
        let b = sample_corpus(&model, 5, 7, 11).unwrap();
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.paths, b.paths);
        for t in &a.traces {
            for r in &t.records {
                assert!((0.0..SECONDS_PER_DAY).contains(&r.t_day));
                assert!((vmf::l2_norm(&r.embedding) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_undoes_a_permutation() {
        let model = PlantedSpec::recovery(5).build().unwrap();
        let perm = [3, 0, 4, 1, 2];
        let shuffled = model.permuted(&perm).unwrap();
        let back = align_states(&model, &shuffled).unwrap();
        assert_eq!(shuffled.permuted(&back).unwrap(), model);
    }

    #[test]
    fn experiments_produce_rows() {
        let params = ExperimentParams {
            p: 10,
            kappa: 20.0,
            n: 2000,
            n_grid: vec![100, 1000],
            kappa_grid: vec![5.0, 50.0],
            p_grid: vec![3, 30],
            repeats: 3,
        };
        for exp in [
            Experiment::NewtonConvergence,
            Experiment::EstimationVsN,
            Experiment::EstimationVsKappa,
            Experiment::EstimationVsP,
        ] {
            let a = run_experiment(exp, &params, 4).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, run_experiment(exp, &params, 4).unwrap());
        }
        let bad = ExperimentParams {
            n_grid: vec![],
            ..params
        };
        assert!(run_experiment(Experiment::EstimationVsN, &bad, 0).is_err());
    }
}
