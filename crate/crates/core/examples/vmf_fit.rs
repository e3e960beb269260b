//! Draws from a von Mises-Fisher distribution and recovers its parameters,
//! printing every Newton iterate of the concentration solve.
//!
//! `cargo run --example vmf_fit -- [p] [kappa] [n]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shmm::vmf::{dot, estimate_kappa, fit_vmf, sample_vmf, uniform_sphere, KappaSolverOptions, ResultantStats, VmfParams};

fn main() -> shmm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let p: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(100);
    let kappa: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100_000);

    let mu = uniform_sphere(&mut ChaCha8Rng::seed_from_u64(1), p);
    let truth = VmfParams::new(mu, kappa)?;
    let sample = sample_vmf(&truth, n, 2)?;

    let stats = ResultantStats::from_vectors(&sample);
    println!("p = {p}, kappa = {kappa}, n = {n}, mean resultant length = {:.10}", stats.r_bar());
    let est = estimate_kappa(&stats, KappaSolverOptions::default())?;
    for (i, it) in est.trace.iter().enumerate() {
        let label = if i == 0 { "banerjee" } else { "newton" };
        println!("  {label:>8} {i}: kappa = {:<20.12} |A_p(kappa) - r| = {:.3e}", it.kappa, it.residual);
    }

    let fit = fit_vmf(&sample, &vec![1.0; n])?;
    println!(
        "fitted kappa = {:.4} (relative error {:.2e}), mu_hat . mu = {:.8}",
        fit.params.kappa,
        (fit.params.kappa - kappa).abs() / kappa,
        dot(&fit.params.mu, &truth.mu)
    );
    Ok(())
}
