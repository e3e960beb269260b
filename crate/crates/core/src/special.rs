//! Modified Bessel functions of the first kind, evaluated in log space, and the
//! ratio `A_p(κ) = I_{p/2}(κ) / I_{p/2-1}(κ)` that drives vMF estimation.
//!
//! Two regimes are used for `log I_v(κ)`:
//!
//! * `κ < SERIES_CUTOFF`: the defining power series, summed relative to its
//!   leading term so nothing overflows.
//! * otherwise: Hankel's large-argument expansion at the fractional order
//!   `μ = v - ⌊v⌋`, lifted to order `v` with ratios from Perron's continued
//!   fraction and the (stable) downward three-term recurrence.
//!
//! The ratio itself always comes from Perron's continued fraction, which
//! converges in a few dozen terms for every `κ > 0`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Below this argument the power series is used for `log I_v`.
pub const SERIES_CUTOFF: f64 = 20.0;

const CF_MAX_TERMS: usize = 10_000;
const CF_TINY: f64 = 1e-30;

/// Order `v ≥ 0` of a modified Bessel function.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(f64);

impl BesselOrder {
    pub fn new(v: f64) -> Result<Self> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain(format!("Bessel order must be finite and >= 0, got {v}")));
        }
        Ok(BesselOrder(v))
    }

    /// Order `p/2 - 1` of the vMF normalizer in dimension `p`.
    pub fn vmf(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::domain(format!("dimension must be >= 2, got {p}")));
        }
        Ok(BesselOrder(p as f64 / 2.0 - 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Natural logarithm of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::domain(format!("kappa must be finite and > 0, got {kappa}")));
    }
    Ok(())
}

/// `log I_v(κ)`, accurate to well below `1e-10` absolute for `κ ∈ [1e-6, 1e6]`.
pub fn log_bessel_i(v: BesselOrder, kappa: f64) -> Result<f64> {
    let (lead, rest) = log_bessel_i_split(v, kappa)?;
    Ok(lead + rest)
}

/// `log I_v(κ)` as `lead + rest` with `lead` exact (0 or κ) and `rest` of
/// order `log κ`, so callers can cancel against `lead` before rounding.
pub(crate) fn log_bessel_i_split(v: BesselOrder, kappa: f64) -> Result<(f64, f64)> {
    check_kappa(kappa)?;
    let v = v.value();
    if kappa < SERIES_CUTOFF {
        Ok((0.0, log_bessel_i_series(v, kappa)))
    } else {
        Ok((kappa, log_bessel_i_large_minus_x(v, kappa)))
    }
}

/// `log I_v(x) = v log(x/2) - lnΓ(v+1) + log Σ_q t_q` with `t_0 = 1` and
/// `t_{q+1} = t_q (x²/4) / ((q+1)(q+1+v))`.
fn log_bessel_i_series(v: f64, x: f64) -> f64 {
    let quarter_x2 = 0.25 * x * x;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut q = 0.0_f64;
    loop {
        q += 1.0;
        term *= quarter_x2 / (q * (q + v));
        sum += term;
        // Terms peak near q ≈ x/2; only stop once they are decreasing.
        if term < sum * 1e-17 && q * (q + v) > quarter_x2 {
            break;
        }
    }
    v * (0.5 * x).ln() - ln_gamma(v + 1.0) + sum.ln()
}

/// `log I_v(x) - x` for large `x`.
fn log_bessel_i_large_minus_x(v: f64, x: f64) -> f64 {
    let whole = v.floor();
    let mu = v - whole;
    let steps = whole as usize;

    let mut log_i = log_bessel_i_hankel_minus_x(mu, x);
    if steps > 0 {
        // r_k = I_k / I_{k-1}; seed the top ratio and recur downward with
        // r_k = 1 / (2k/x + r_{k+1}).
        let mut r = perron_ratio(v, x);
        log_i += r.ln();
        for j in (1..steps).rev() {
            let order = mu + j as f64;
            r = 1.0 / (2.0 * order / x + r);
            log_i += r.ln();
        }
    }
    log_i
}

/// Hankel's expansion `I_μ(x) ~ e^x / √(2πx) Σ_k (-1)^k a_k(μ) / x^k`, valid for
/// large `x` and small `μ`; the neglected exponentially small part is
/// `O(e^{-2x})` relative. Returns `log I_μ(x) - x`.
fn log_bessel_i_hankel_minus_x(mu: f64, x: f64) -> f64 {
    let four_mu2 = 4.0 * mu * mu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = 0.0_f64;
    loop {
        k += 1.0;
        let odd = 2.0 * k - 1.0;
        let next = term * (odd * odd - four_mu2) / (8.0 * k * x);
        if next == 0.0 || next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum.ln() - 0.5 * (2.0 * PI * x).ln()
}

/// Tail `T` of Perron's continued fraction
///
/// ```text
/// I_ν(x) / I_{ν-1}(x) = x / (2ν + x + T)
/// T = -(2ν+1)x / (2ν+1+2x - (2ν+3)x / (2ν+2+2x - ...))
/// ```
///
/// evaluated with the modified Lentz algorithm. Keeping `T` separate lets
/// `1 - I_ν/I_{ν-1} = (2ν + T) / (2ν + x + T)` be formed without cancellation.
fn perron_tail(nu: f64, x: f64) -> f64 {
    let mut f = CF_TINY;
    let mut c = f;
    let mut d = 0.0_f64;
    for k in 1..=CF_MAX_TERMS {
        let kf = k as f64;
        let a = -(2.0 * nu + 2.0 * kf - 1.0) * x;
        let b = 2.0 * nu + kf + 2.0 * x;
        d = b + a * d;
        if d == 0.0 {
            d = CF_TINY;
        }
        c = b + a / c;
        if c == 0.0 {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

/// `I_ν(x) / I_{ν-1}(x)` for `ν > 0`, `x > 0`.
fn perron_ratio(nu: f64, x: f64) -> f64 {
    x / (2.0 * nu + x + perron_tail(nu, x))
}

/// `A_p(κ) = I_{p/2}(κ) / I_{p/2-1}(κ)`, the expected cosine between a vMF
/// draw and its mean direction. Strictly increasing from 0 to 1.
pub fn bessel_ratio_a(p: usize, kappa: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::domain(format!("dimension must be >= 2, got {p}")));
    }
    if kappa == 0.0 {
        return Ok(0.0);
    }
    check_kappa(kappa)?;
    Ok(perron_ratio(p as f64 / 2.0, kappa))
}

/// `1 - A_p(κ)`, accurate to full relative precision even when `A_p(κ)` is
/// within a few ulps of 1.
pub fn bessel_ratio_a_complement(p: usize, kappa: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::domain(format!("dimension must be >= 2, got {p}")));
    }
    if kappa == 0.0 {
        return Ok(1.0);
    }
    check_kappa(kappa)?;
    let two_nu = p as f64;
    let tail = perron_tail(0.5 * two_nu, kappa);
    Ok((two_nu + tail) / (two_nu + kappa + tail))
}

/// `A_p'(κ) = 1 - A² - (p-1) A / κ`, given `a_value = A_p(κ)`.
pub fn bessel_ratio_a_prime(p: usize, kappa: f64, a_value: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::domain(format!("dimension must be >= 2, got {p}")));
    }
    check_kappa(kappa)?;
    Ok(1.0 - a_value * a_value - (p as f64 - 1.0) * a_value / kappa)
}
