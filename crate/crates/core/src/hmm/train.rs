use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::{lattice, posterior_from_lattice};
use super::{CompiledModel, ShmmModel};
use crate::data::{SemanticRecord, Trace};
use crate::emission::{m_step_state, EmissionConfig, StateAccumulator, StateParams, TextParams};
use crate::error::{Error, Result};
use crate::vmf::{KappaSolverOptions, VmfParams};

/// Additive floor on initial and transition probabilities before
/// renormalization.
pub const PROB_FLOOR: f64 = 1e-6;
/// Pseudo-count for initial `pi`/`A` estimates from cluster labels.
const INIT_PSEUDOCOUNT: f64 = 0.1;
/// Traces per E-step work unit. Fixed so the reduction order does not depend
/// on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// k-means++ seeded Lloyd clustering of the records, on location when
    /// enabled, else on the embedding, else on time of day.
    KMeans { seed: u64, max_iters: usize },
    /// Start from an existing model.
    Model(ShmmModel),
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::KMeans {
            seed: 0,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchOptions {
    /// Stop when the relative log-likelihood gain falls below this.
    pub rel_tol: f64,
    /// Maximum number of M-steps.
    pub max_iters: usize,
    #[serde(skip)]
    pub kappa: KappaSolverOptions,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        BaumWelchOptions {
            rel_tol: 1e-6,
            max_iters: 200,
            kappa: KappaSolverOptions::default(),
        }
    }
}

/// Log-likelihood of the corpus under the model after `iteration` M-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub iteration: usize,
    pub log_likelihood: f64,
    /// Wall time since EM started, excluding initialization.
    pub seconds: f64,
    /// States re-seeded by the M-step that produced this model.
    pub reseeded: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: ShmmModel,
    pub history: Vec<EmIteration>,
    pub converged: bool,
}

impl TrainedModel {
    pub fn final_log_likelihood(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.log_likelihood)
    }
}

/// Position of a record in the corpus with its best per-state emission score.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Outlier {
    score: f64,
    trace: usize,
    record: usize,
}

impl Outlier {
    fn key(&self) -> (f64, usize, usize) {
        (self.score, self.trace, self.record)
    }
}

/// Keeps the `cap` lowest-scoring records, ties by position.
fn push_outlier(list: &mut Vec<Outlier>, cap: usize, o: Outlier) {
    let pos = list.partition_point(|x| x.key().partial_cmp(&o.key()) == Some(std::cmp::Ordering::Less));
    if pos < cap {
        list.insert(pos, o);
        list.truncate(cap);
    }
}

struct EStats {
    log_likelihood: f64,
    first: Vec<f64>,
    xi: Vec<Vec<f64>>,
    acc: Vec<StateAccumulator>,
    outliers: Vec<Outlier>,
}

impl EStats {
    fn empty(template: &[StateAccumulator]) -> Self {
        let k = template.len();
        EStats {
            log_likelihood: 0.0,
            first: vec![0.0; k],
            xi: vec![vec![0.0; k]; k],
            acc: template.iter().map(StateAccumulator::empty_like).collect(),
            outliers: Vec::new(),
        }
    }

    fn merge(&mut self, other: EStats) {
        let k = self.first.len();
        self.log_likelihood += other.log_likelihood;
        for i in 0..k {
            self.first[i] += other.first[i];
            for j in 0..k {
                self.xi[i][j] += other.xi[i][j];
            }
            self.acc[i].merge(&other.acc[i]);
        }
        for o in other.outliers {
            push_outlier(&mut self.outliers, k, o);
        }
    }
}

fn e_step(cm: &CompiledModel, model: &ShmmModel, corpus: &[Trace]) -> Result<EStats> {
    let template: Vec<StateAccumulator> = model
        .states
        .iter()
        .map(|s| StateAccumulator::new(s.mu_t, s.mu_l, model.config.text_model, model.embedding_dim))
        .collect();
    let k = model.n_states;
    let chunks: Vec<EStats> = corpus
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, traces)| {
            let mut st = EStats::empty(&template);
            for (offset, trace) in traces.iter().enumerate() {
                let t_idx = c * CHUNK + offset;
                let lat = lattice(cm, &trace.records)?;
                let post = posterior_from_lattice(cm, &lat);
                st.log_likelihood += post.log_likelihood;
                for z in 0..k {
                    st.first[z] += post.gamma[0][z];
                    for j in 0..k {
                        st.xi[z][j] += post.xi_sum[z][j];
                    }
                }
                for (r_idx, (rec, g)) in trace.records.iter().zip(&post.gamma).enumerate() {
                    for (acc, &w) in st.acc.iter_mut().zip(g) {
                        if w > 0.0 {
                            acc.push(rec, w);
                        }
                    }
                    let best = lat.log_b[r_idx].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    push_outlier(
                        &mut st.outliers,
                        k,
                        Outlier {
                            score: best,
                            trace: t_idx,
                            record: r_idx,
                        },
                    );
                }
            }
            Ok(st)
        })
        .collect::<Result<_>>()?;
    let mut total = EStats::empty(&template);
    for c in chunks {
        total.merge(c);
    }
    Ok(total)
}

/// Normalizes `counts`, adds [`PROB_FLOOR`] to every entry and renormalizes.
fn smoothed(counts: &[f64]) -> Vec<f64> {
    let sum: f64 = counts.iter().sum();
    let k = counts.len() as f64;
    let base: Vec<f64> = if sum > 0.0 {
        counts.iter().map(|c| c / sum).collect()
    } else {
        vec![1.0 / k; counts.len()]
    };
    let z = 1.0 + k * PROB_FLOOR;
    base.into_iter().map(|p| (p + PROB_FLOOR) / z).collect()
}

/// Parameters for a state re-seeded at `record`, with spreads borrowed from
/// the surviving states.
fn reseed_state(record: &SemanticRecord, live: &[&StateParams], config: &EmissionConfig) -> Result<StateParams> {
    let n = live.len().max(1) as f64;
    let mean = |f: &dyn Fn(&StateParams) -> f64, fallback: f64| {
        if live.is_empty() {
            fallback
        } else {
            live.iter().map(|s| f(s)).sum::<f64>() / n
        }
    };
    let sigma_t = mean(&|s| s.sigma_t, 3600.0).max(config.sigma_t_floor);
    let v = config.var_floor.max(1e-4);
    let sigma_l = [
        [mean(&|s| s.sigma_l[0][0], v), mean(&|s| s.sigma_l[0][1], 0.0)],
        [mean(&|s| s.sigma_l[1][0], 0.0), mean(&|s| s.sigma_l[1][1], v)],
    ];
    let text = match config.text_model {
        crate::emission::TextModel::None => TextParams::None,
        crate::emission::TextModel::Vmf => {
            let kappa = mean(&|s| s.text.vmf().map_or(1.0, |p| p.kappa), 1.0);
            TextParams::Vmf(VmfParams::new(record.embedding.clone(), kappa)?)
        }
        crate::emission::TextModel::DiagGaussian => {
            let dim = record.embedding.len();
            let var = (0..dim)
                .map(|j| {
                    mean(
                        &|s| match &s.text {
                            TextParams::DiagGaussian { var, .. } => var[j],
                            _ => 1.0 / dim as f64,
                        },
                        1.0 / dim as f64,
                    )
                })
                .collect();
            TextParams::DiagGaussian {
                mean: record.embedding.clone(),
                var,
            }
        }
    };
    Ok(StateParams {
        mu_t: record.t_day,
        sigma_t,
        mu_l: record.loc,
        sigma_l,
        text,
    })
}

/// Fills `None` slots with states re-seeded from `seeds` in order.
fn fill_dead(
    states: Vec<Option<StateParams>>,
    seeds: &mut dyn Iterator<Item = SemanticRecord>,
    config: &EmissionConfig,
) -> Result<(Vec<StateParams>, Vec<usize>)> {
    let dead: Vec<usize> = (0..states.len()).filter(|&i| states[i].is_none()).collect();
    if dead.is_empty() {
        return Ok((states.into_iter().map(Option::unwrap).collect(), dead));
    }
    let live: Vec<StateParams> = states.iter().flatten().cloned().collect();
    let live_refs: Vec<&StateParams> = live.iter().collect();
    let mut out = Vec::with_capacity(states.len());
    for s in states {
        match s {
            Some(s) => out.push(s),
            None => {
                let rec = seeds
                    .next()
                    .ok_or_else(|| Error::Config("not enough records to re-seed empty states".into()))?;
                out.push(reseed_state(&rec, &live_refs, config)?);
            }
        }
    }
    Ok((out, dead))
}

fn m_step(
    model: &ShmmModel,
    stats: &EStats,
    corpus: &[Trace],
    opts: &BaumWelchOptions,
) -> Result<(ShmmModel, Vec<usize>)> {
    let pi = smoothed(&stats.first);
    let trans: Vec<Vec<f64>> = stats.xi.iter().map(|row| smoothed(row)).collect();
    let states = stats
        .acc
        .iter()
        .map(|acc| match acc.finish(&model.config, opts.kappa) {
            Ok(s) => Ok(Some(s)),
            Err(Error::EmptyState { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seeds = stats
        .outliers
        .iter()
        .map(|o| corpus[o.trace].records[o.record].clone());
    let (states, reseeded) = fill_dead(states, &mut seeds, &model.config)?;
    for &d in &reseeded {
        log::warn!("state {d} lost its responsibility mass and was re-seeded");
    }
    let next = ShmmModel::new(pi, trans, states, model.config, model.embedding_dim)?;
    Ok((next, reseeded))
}

fn check_corpus(corpus: &[Trace], config: &EmissionConfig) -> Result<usize> {
    let first = corpus.first().and_then(|t| t.records.first()).ok_or(Error::EmptyCorpus)?;
    let dim = first.dim();
    for t in corpus {
        if t.is_empty() {
            return Err(Error::EmptyInput);
        }
        for r in &t.records {
            crate::emission::check_record(r, config, dim)?;
        }
    }
    Ok(dim)
}

/// Fits a `k`-state model to `corpus` by Baum-Welch.
///
/// `history[i]` is the corpus log-likelihood after `i` M-steps; entry 0 is
/// the initial model. The returned model is the one scored last.
pub fn baum_welch(
    corpus: &[Trace],
    k: usize,
    config: &EmissionConfig,
    init: &InitStrategy,
    opts: &BaumWelchOptions,
) -> Result<TrainedModel> {
    config.validate()?;
    if k == 0 {
        return Err(Error::Config("number of states must be at least 1".into()));
    }
    let dim = check_corpus(corpus, config)?;
    let mut model = match init {
        InitStrategy::KMeans { seed, max_iters } => kmeans_init(corpus, k, config, dim, *seed, *max_iters)?,
        InitStrategy::Model(m) => {
            if m.n_states != k || m.config != *config || (config.uses_text() && m.embedding_dim != dim) {
                return Err(Error::Config("initial model does not match the requested configuration".into()));
            }
            m.validate()?;
            m.clone()
        }
    };

    let start = Instant::now();
    let mut history: Vec<EmIteration> = Vec::new();
    let mut reseeded = Vec::new();
    let mut converged = false;
    for it in 0..=opts.max_iters {
        let cm = model.compile()?;
        let stats = e_step(&cm, &model, corpus)?;
        let ll = stats.log_likelihood;
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood);
        }
        log::debug!("EM iteration {it}: log-likelihood {ll}");
        let prev = history.last().map(|h| h.log_likelihood);
        history.push(EmIteration {
            iteration: it,
            log_likelihood: ll,
            seconds: start.elapsed().as_secs_f64(),
            reseeded: std::mem::take(&mut reseeded),
        });
        if let Some(prev) = prev {
            if ll - prev < opts.rel_tol * prev.abs() {
                converged = true;
                break;
            }
        }
        if it == opts.max_iters {
            break;
        }
        let (next, dead) = m_step(&model, &stats, corpus, opts)?;
        model = next;
        reseeded = dead;
    }
    Ok(TrainedModel {
        model,
        history,
        converged,
    })
}

fn init_features(r: &SemanticRecord, config: &EmissionConfig) -> Vec<f64> {
    if config.use_location {
        r.loc.to_vec()
    } else if config.uses_text() {
        r.embedding.clone()
    } else {
        vec![r.t_day]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding. Returns the label of each point;
/// ties go to the lowest cluster index and empty clusters keep their
/// previous centre.
pub fn kmeans_pp(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<Vec<usize>> {
    if points.len() < k || k == 0 {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} records",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[idx].clone();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centers.push(c);
    }

    let mut labels: Vec<usize> = points.par_iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..max_iters {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.par_iter().map(|p| nearest(p, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}

fn kmeans_init(
    corpus: &[Trace],
    k: usize,
    config: &EmissionConfig,
    dim: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ShmmModel> {
    let records: Vec<&SemanticRecord> = corpus.iter().flat_map(|t| t.records.iter()).collect();
    let features: Vec<Vec<f64>> = records.iter().map(|r| init_features(r, config)).collect();
    let labels = kmeans_pp(&features, k, seed, max_iters)?;

    let mut states = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&SemanticRecord> = records
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| *r)
            .collect();
        states.push(if members.is_empty() {
            None
        } else {
            Some(m_step_state(&members, &vec![1.0; members.len()], config, dim)?)
        });
    }
    // Empty clusters restart at the records farthest from their centres.
    let mut far: Vec<(usize, f64)> = Vec::new();
    if states.iter().any(Option::is_none) {
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let m: Vec<&Vec<f64>> = features.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(f, _)| f).collect();
                let n = m.len().max(1) as f64;
                (0..features[0].len()).map(|j| m.iter().map(|f| f[j]).sum::<f64>() / n).collect()
            })
            .collect();
        far = features
            .iter()
            .zip(&labels)
            .enumerate()
            .map(|(i, (f, &l))| (i, sq_dist(f, &centers[l])))
            .collect();
        far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    let mut seeds = far.iter().map(|(i, _)| records[*i].clone());
    let (states, _) = fill_dead(states, &mut seeds, config)?;

    let mut first = vec![INIT_PSEUDOCOUNT; k];
    let mut counts = vec![vec![INIT_PSEUDOCOUNT; k]; k];
    let mut offset = 0;
    for t in corpus {
        let l = &labels[offset..offset + t.len()];
        first[l[0]] += 1.0;
        for w in l.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        offset += t.len();
    }
    let pi = smoothed(&first);
    let trans = counts.iter().map(|r| smoothed(r)).collect();
    ShmmModel::new(pi, trans, states, *config, dim)
}
