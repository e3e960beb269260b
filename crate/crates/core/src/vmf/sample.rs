use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::{dot, l2_norm, VmfParams};
use crate::error::{Error, Result};

/// Draws `n` unit vectors from `vMF(μ, κ)`, deterministically for a given seed.
///
/// Wood's rejection scheme samples the cosine `w = μᵀm`; the tangent part is
/// uniform on `S^{p-2}`. Samples are built around `e₁` and reflected onto `μ`
/// with a Householder map.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = VmfSampler::new(params)?;
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

/// Reusable sampler for a fixed parameter set.
#[derive(Debug, Clone)]
pub struct VmfSampler {
    mu: Vec<f64>,
    kappa: f64,
    // Wood's constants.
    b: f64,
    x0: f64,
    c: f64,
    beta: Option<Beta<f64>>,
    // Householder vector u with H = I - 2uuᵀ, H e₁ = μ; None when μ = e₁.
    householder: Option<Vec<f64>>,
}

impl VmfSampler {
    pub fn new(params: &VmfParams) -> Result<Self> {
        let p = params.dim();
        if p < 2 {
            return Err(Error::domain("vMF dimension must be >= 2"));
        }
        let pm1 = (p - 1) as f64;
        let kappa = params.kappa;
        // b = (-2κ + √(4κ² + (p-1)²)) / (p-1), in cancellation-free form.
        let b = pm1 / (2.0 * kappa + (4.0 * kappa * kappa + pm1 * pm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + pm1 * (1.0 - x0 * x0).ln();
        let beta = if kappa > 0.0 {
            Some(Beta::new(pm1 / 2.0, pm1 / 2.0).map_err(|e| Error::domain(e.to_string()))?)
        } else {
            None
        };

        let mu = params.mu.clone();
        let mut u = mu.clone();
        u[0] -= 1.0;
        let norm = l2_norm(&u);
        let householder = if norm > 1e-12 {
            Some(u.into_iter().map(|x| x / norm).collect())
        } else {
            None
        };
        Ok(VmfSampler {
            mu,
            kappa,
            b,
            x0,
            c,
            beta,
            householder,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.dim();
        let Some(beta) = self.beta.as_ref() else {
            return uniform_sphere(rng, p);
        };
        let pm1 = (p - 1) as f64;
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.gen();
            if self.kappa * w + pm1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                break w;
            }
        };

        let tangent = uniform_sphere(rng, p - 1);
        let s = (1.0 - w * w).max(0.0).sqrt();
        let mut m = Vec::with_capacity(p);
        m.push(w);
        m.extend(tangent.iter().map(|t| s * t));

        if let Some(u) = &self.householder {
            let proj = 2.0 * dot(u, &m);
            for (mi, ui) in m.iter_mut().zip(u) {
                *mi -= proj * ui;
            }
        }
        let norm = l2_norm(&m);
        m.iter_mut().for_each(|x| *x /= norm);
        m
    }
}

/// Uniform draw from `S^{dim-1}` by normalizing a standard Gaussian vector.
pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = l2_norm(&v);
        if norm > 1e-300 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bessel_ratio_a;
    use crate::vmf::fit_vmf;

    fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
        uniform_sphere(&mut ChaCha8Rng::seed_from_u64(seed), dim)
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let params = VmfParams::new(random_unit(7, 1), 12.0).unwrap();
        let a = sample_vmf(&params, 500, 42).unwrap();
        let b = sample_vmf(&params, 500, 42).unwrap();
        assert_eq!(a, b);
        for m in &a {
            assert!((l2_norm(m) - 1.0).abs() < 1e-12);
        }
        assert_ne!(a, sample_vmf(&params, 500, 43).unwrap());
    }

    #[test]
    fn uniform_when_kappa_zero() {
        let mut mu = vec![0.0; 3];
        mu[0] = 1.0;
        let params = VmfParams::new(mu, 0.0).unwrap();
        let n = 1_000_000;
        let xs = sample_vmf(&params, n, 7).unwrap();
        let mut mean = [0.0; 3];
        for m in &xs {
            for i in 0..3 {
                mean[i] += m[i] / n as f64;
            }
        }
        assert!(l2_norm(&mean) < 0.005, "{mean:?}");
    }

    #[test]
    fn mean_cosine_matches_ratio_p3() {
        let mu = random_unit(3, 9);
        let params = VmfParams::new(mu.clone(), 5.0).unwrap();
        let n = 1_000_000;
        let xs = sample_vmf(&params, n, 11).unwrap();
        let mean_cos: f64 = xs.iter().map(|m| dot(&mu, m)).sum::<f64>() / n as f64;
        let closed = 1.0 / 5.0_f64.tanh() - 0.2;
        assert!((mean_cos - closed).abs() < 0.002, "{mean_cos} vs {closed}");
        assert!((closed - bessel_ratio_a(3, 5.0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn round_trip_p30_kappa50() {
        let mu = random_unit(30, 3);
        let params = VmfParams::new(mu.clone(), 50.0).unwrap();
        let xs = sample_vmf(&params, 100_000, 5).unwrap();
        let fit = fit_vmf(&xs, &vec![1.0; xs.len()]).unwrap();
        assert!(((fit.params.kappa - 50.0) / 50.0).abs() < 0.02, "{}", fit.params.kappa);
        assert!(dot(&fit.params.mu, &mu) > 0.999);
    }

    #[test]
    fn round_trip_p100_kappa100() {
        let mu = random_unit(100, 4);
        let params = VmfParams::new(mu, 100.0).unwrap();
        let xs = sample_vmf(&params, 100_000, 6).unwrap();
        let fit = fit_vmf(&xs, &vec![1.0; xs.len()]).unwrap();
        assert!(((fit.params.kappa - 100.0) / 100.0).abs() < 0.05, "{}", fit.params.kappa);
    }

    #[test]
    fn two_dimensional_sampling() {
        let params = VmfParams::new(vec![0.0, 1.0], 2.0).unwrap();
        let xs = sample_vmf(&params, 200_000, 1).unwrap();
        let mean_cos: f64 = xs.iter().map(|m| m[1]).sum::<f64>() / xs.len() as f64;
        let want = bessel_ratio_a(2, 2.0).unwrap();
        assert!((mean_cos - want).abs() < 0.005);
    }
}
