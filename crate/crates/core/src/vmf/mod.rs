//! The von Mises-Fisher distribution on the unit sphere `S^{p-1}`.
//!
//! The concentration MLE solves `A_p(κ) = r̄`. [`estimate_kappa`] starts from
//! Banerjee's closed-form approximation `κ₀ = (r̄p - r̄³) / (1 - r̄²)` and
//! refines with Newton's method,
//!
//! ```text
//! κ ← κ - (A_p(κ) - r̄) / (1 - A_p(κ)² - (p-1)/κ · A_p(κ))
//! ```
//!
//! falling back to a bracketed Newton/bisection hybrid if an iterate leaves
//! the positive axis or the residual grows.

mod sample;

use std::f64::consts::PI;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    bessel_ratio_a, bessel_ratio_a_complement, bessel_ratio_a_prime, ln_gamma, log_bessel_i_split,
    BesselOrder,
};

pub use sample::{sample_vmf, uniform_sphere, VmfSampler};

/// Upper limit on the concentration parameter.
pub const KAPPA_MAX: f64 = 1e6;

/// Mean resultant length at or above which the sample is treated as a point mass.
pub const R_BAR_DEGENERATE: f64 = 1.0 - 1e-12;

/// Mean resultant length below which the sample is treated as uniform.
pub const R_BAR_UNIFORM: f64 = 1e-10;

const UNIT_NORM_TOL: f64 = 1e-9;

/// Mean direction and concentration of a vMF distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub mu: Vec<f64>,
    pub kappa: f64,
}

impl VmfParams {
    /// Validates and renormalizes `mu`. `mu` must already be unit length within `1e-9`.
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::domain(format!("vMF dimension must be >= 2, got {}", mu.len())));
        }
        if !(0.0..=KAPPA_MAX).contains(&kappa) {
            return Err(Error::domain(format!("kappa must lie in [0, {KAPPA_MAX}], got {kappa}")));
        }
        let norm = l2_norm(&mu);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::domain(format!("mean direction must be unit length, norm = {norm}")));
        }
        let mu = mu.into_iter().map(|x| x / norm).collect();
        Ok(VmfParams { mu, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_normalizer(&self) -> Result<f64> {
        log_normalizer(self.dim(), self.kappa)
    }
}

/// Sufficient statistic for a (weighted) sample of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultantStats {
    pub resultant: Vec<f64>,
    pub weight: f64,
}

impl ResultantStats {
    pub fn new(dim: usize) -> Self {
        ResultantStats {
            resultant: vec![0.0; dim],
            weight: 0.0,
        }
    }

    pub fn from_vectors<V: AsRef<[f64]>>(vectors: &[V]) -> Self {
        let dim = vectors.first().map_or(0, |v| v.as_ref().len());
        let mut stats = ResultantStats::new(dim);
        for v in vectors {
            stats.push(v.as_ref(), 1.0);
        }
        stats
    }

    pub fn push(&mut self, m: &[f64], weight: f64) {
        for (r, x) in self.resultant.iter_mut().zip(m) {
            *r += weight * x;
        }
        self.weight += weight;
    }

    pub fn merge(&mut self, other: &ResultantStats) {
        for (r, x) in self.resultant.iter_mut().zip(&other.resultant) {
            *r += x;
        }
        self.weight += other.weight;
    }

    pub fn dim(&self) -> usize {
        self.resultant.len()
    }

    pub fn resultant_norm(&self) -> f64 {
        l2_norm(&self.resultant)
    }

    /// Mean resultant length `‖Σ wᵢ mᵢ‖ / Σ wᵢ`, clamped into `[0, 1]`.
    pub fn r_bar(&self) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        (self.resultant_norm() / self.weight).min(1.0)
    }
}

/// `log C_p(κ)`; for `κ = 0` this is minus the log surface area of `S^{p-1}`.
pub fn log_normalizer(p: usize, kappa: f64) -> Result<f64> {
    let order = BesselOrder::vmf(p)?;
    if kappa == 0.0 {
        return Ok(-log_sphere_area(p));
    }
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::domain(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let half_p = p as f64 / 2.0;
    // The O(κ) part of log I is cancelled last so the result is rounded once.
    let (lead, rest) = log_bessel_i_split(order, kappa)?;
    Ok(((half_p - 1.0) * kappa.ln() - half_p * (2.0 * PI).ln() - rest) - lead)
}

/// `log(2 π^{p/2} / Γ(p/2))`.
pub fn log_sphere_area(p: usize) -> f64 {
    let half_p = p as f64 / 2.0;
    2.0_f64.ln() + half_p * PI.ln() - ln_gamma(half_p)
}

/// `log f_p(m; μ, κ) = log C_p(κ) + κ μᵀm`.
pub fn vmf_log_pdf(params: &VmfParams, m: &[f64]) -> Result<f64> {
    if m.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: m.len(),
        });
    }
    let norm = l2_norm(m);
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::domain(format!("observation must be unit length, norm = {norm}")));
    }
    Ok(params.log_normalizer()? + params.kappa * dot(&params.mu, m))
}

/// Solver settings for [`estimate_kappa`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSolverOptions {
    /// Stop once `|A_p(κ) - r̄| ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KappaSolverOptions {
    fn default() -> Self {
        KappaSolverOptions {
            tol: 1e-13,
            max_iter: 50,
        }
    }
}

/// One iterate of the concentration solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaIterate {
    pub kappa: f64,
    /// `|A_p(κ) - r̄|`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    pub kappa: f64,
    /// Solver steps taken after the starting point.
    pub iterations: usize,
    pub residual: f64,
    /// Starting point followed by every iterate.
    pub trace: Vec<KappaIterate>,
    /// Whether the bracketed fallback was needed.
    pub safeguarded: bool,
}

/// Banerjee's approximation to the root of `A_p(κ) = r̄`.
pub fn banerjee_init(p: usize, r_bar: f64) -> f64 {
    let p = p as f64;
    (r_bar * p - r_bar.powi(3)) / (1.0 - r_bar * r_bar)
}

/// Signed `A_p(κ) - r̄`. Near `r̄ = 1` both sides are formed as complements so
/// the difference keeps full precision.
pub fn ratio_residual(p: usize, kappa: f64, r_bar: f64) -> Result<f64> {
    if r_bar >= 0.5 {
        Ok((1.0 - r_bar) - bessel_ratio_a_complement(p, kappa)?)
    } else {
        Ok(bessel_ratio_a(p, kappa)? - r_bar)
    }
}

fn ratio_slope(p: usize, kappa: f64) -> Result<f64> {
    let a = bessel_ratio_a(p, kappa)?;
    bessel_ratio_a_prime(p, kappa, a)
}

/// Concentration MLE from a resultant: the unique root of `A_p(κ) = r̄`.
pub fn estimate_kappa(stats: &ResultantStats, opts: KappaSolverOptions) -> Result<KappaEstimate> {
    if stats.weight <= 0.0 {
        return Err(Error::EmptyInput);
    }
    solve_kappa(stats.dim(), stats.r_bar(), opts)
}

/// Root of `A_p(κ) = r̄` from the Banerjee starting point.
pub fn solve_kappa(p: usize, r_bar: f64, opts: KappaSolverOptions) -> Result<KappaEstimate> {
    if p < 2 {
        return Err(Error::domain(format!("dimension must be >= 2, got {p}")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::domain("solver tolerance and iteration budget must be positive"));
    }
    if !r_bar.is_finite() || r_bar < 0.0 {
        return Err(Error::domain(format!("mean resultant length must be in [0, 1], got {r_bar}")));
    }
    if r_bar >= R_BAR_DEGENERATE || ratio_residual(p, KAPPA_MAX, r_bar)? <= 0.0 {
        warn!("mean resultant length {r_bar} at or beyond the concentration cap");
        return Err(Error::DegenerateResultant {
            r_bar,
            kappa: KAPPA_MAX,
        });
    }
    if r_bar < R_BAR_UNIFORM {
        return Err(Error::NearUniform { r_bar });
    }
    newton_kappa_from(p, r_bar, banerjee_init(p, r_bar), opts)
}

/// Newton's method for `A_p(κ) = r̄` from an arbitrary positive start,
/// with the bracketed fallback. Requires `0 < r̄ < A_p(KAPPA_MAX)`.
pub fn newton_kappa_from(
    p: usize,
    r_bar: f64,
    kappa0: f64,
    opts: KappaSolverOptions,
) -> Result<KappaEstimate> {
    let mut kappa = if kappa0.is_finite() && kappa0 > 0.0 {
        kappa0.min(KAPPA_MAX)
    } else {
        1.0
    };
    let mut g = ratio_residual(p, kappa, r_bar)?;
    let mut trace = vec![KappaIterate {
        kappa,
        residual: g.abs(),
    }];
    debug!("kappa solve p={p} r_bar={r_bar}: start {kappa} residual {:e}", g.abs());

    let mut iterations = 0;
    while g.abs() > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: g.abs(),
            });
        }
        let next = kappa - g / ratio_slope(p, kappa)?;
        if next == kappa {
            // Step below the resolution of κ.
            break;
        }
        if !(next.is_finite() && next > 0.0) {
            return bracketed(p, r_bar, kappa, g, trace, iterations, opts);
        }
        let g_next = ratio_residual(p, next, r_bar)?;
        if g_next.abs() > g.abs() {
            return bracketed(p, r_bar, kappa, g, trace, iterations, opts);
        }
        iterations += 1;
        kappa = next;
        g = g_next;
        trace.push(KappaIterate {
            kappa,
            residual: g.abs(),
        });
        debug!("  newton {iterations}: kappa {kappa} residual {:e}", g.abs());
    }
    Ok(KappaEstimate {
        kappa,
        iterations,
        residual: g.abs(),
        trace,
        safeguarded: false,
    })
}

/// Safeguarded Newton inside a bracket `[lo, hi]` with `g(lo) < 0 < g(hi)`,
/// obtained by geometric expansion from the current point.
fn bracketed(
    p: usize,
    r_bar: f64,
    kappa: f64,
    g: f64,
    mut trace: Vec<KappaIterate>,
    mut iterations: usize,
    opts: KappaSolverOptions,
) -> Result<KappaEstimate> {
    debug!("kappa solve p={p} r_bar={r_bar}: falling back to bracketed search at {kappa}");
    let (mut lo, mut hi) = (kappa, kappa);
    if g < 0.0 {
        hi = (2.0 * hi).min(KAPPA_MAX);
        while ratio_residual(p, hi, r_bar)? < 0.0 {
            if hi >= KAPPA_MAX {
                break;
            }
            lo = hi;
            hi = (2.0 * hi).min(KAPPA_MAX);
        }
    } else {
        lo *= 0.5;
        while ratio_residual(p, lo, r_bar)? > 0.0 {
            hi = lo;
            lo *= 0.5;
        }
    }

    let mut x = kappa;
    let mut gx = g;
    while gx.abs() > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: gx.abs(),
            });
        }
        let newton = x - gx / ratio_slope(p, x)?;
        let candidate = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if candidate == x || candidate <= lo || candidate >= hi {
            // Bracket has collapsed to adjacent doubles.
            break;
        }
        x = candidate;
        gx = ratio_residual(p, x, r_bar)?;
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        iterations += 1;
        trace.push(KappaIterate {
            kappa: x,
            residual: gx.abs(),
        });
    }
    Ok(KappaEstimate {
        kappa: x,
        iterations,
        residual: gx.abs(),
        trace,
        safeguarded: true,
    })
}

/// Why a weighted fit could not produce an interior estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degeneracy {
    /// All mass on one direction; κ capped at [`KAPPA_MAX`].
    Capped,
    /// Resultant numerically zero; κ = 0, μ = e₁.
    ZeroResultant,
    /// Mean resultant length below [`R_BAR_UNIFORM`]; κ = 0.
    NearUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmfFit {
    pub params: VmfParams,
    pub r_bar: f64,
    pub degeneracy: Option<Degeneracy>,
}

/// Weighted maximum-likelihood fit. Weights act as fractional counts.
pub fn fit_vmf<V: AsRef<[f64]>>(vectors: &[V], weights: &[f64]) -> Result<VmfFit> {
    fit_vmf_with(vectors, weights, KappaSolverOptions::default())
}

pub fn fit_vmf_with<V: AsRef<[f64]>>(
    vectors: &[V],
    weights: &[f64],
    opts: KappaSolverOptions,
) -> Result<VmfFit> {
    if vectors.is_empty() || vectors.len() != weights.len() {
        return Err(Error::EmptyInput);
    }
    let dim = vectors[0].as_ref().len();
    let mut stats = ResultantStats::new(dim);
    for (v, &w) in vectors.iter().zip(weights) {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::domain(format!("weights must be finite and >= 0, got {w}")));
        }
        stats.push(v, w);
    }
    fit_from_stats(&stats, opts)
}

/// Fit from an accumulated resultant.
pub fn fit_from_stats(stats: &ResultantStats, opts: KappaSolverOptions) -> Result<VmfFit> {
    let dim = stats.dim();
    if dim < 2 {
        return Err(Error::domain(format!("vMF dimension must be >= 2, got {dim}")));
    }
    if !(stats.weight > 0.0) {
        return Err(Error::EmptyInput);
    }
    let norm = stats.resultant_norm();
    if norm < 1e-12 * stats.weight {
        let mut mu = vec![0.0; dim];
        mu[0] = 1.0;
        return Ok(VmfFit {
            params: VmfParams { mu, kappa: 0.0 },
            r_bar: 0.0,
            degeneracy: Some(Degeneracy::ZeroResultant),
        });
    }
    let mu: Vec<f64> = stats.resultant.iter().map(|x| x / norm).collect();
    let r_bar = stats.r_bar();
    let (kappa, degeneracy) = match solve_kappa(dim, r_bar, opts) {
        Ok(est) => (est.kappa.min(KAPPA_MAX), None),
        Err(Error::DegenerateResultant { kappa, .. }) => (kappa, Some(Degeneracy::Capped)),
        Err(Error::NearUniform { .. }) => (0.0, Some(Degeneracy::NearUniform)),
        Err(e) => return Err(e),
    };
    Ok(VmfFit {
        params: VmfParams { mu, kappa },
        r_bar,
        degeneracy,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
