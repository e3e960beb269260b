//! Modified Bessel functions, the ratio `A_p(κ)` and the vMF normalizer over
//! a wide range of concentrations.
//!
//! `cargo run --example bessel`

use shmm::special::{bessel_ratio_a, bessel_ratio_a_complement, log_bessel_i, BesselOrder};
use shmm::vmf::log_normalizer;

fn main() -> shmm::Result<()> {
    println!("{:>6} {:>10} {:>22} {:>20} {:>14} {:>22}", "p", "kappa", "log I_{p/2-1}", "A_p", "1 - A_p", "log C_p");
    for &p in &[2usize, 3, 10, 100, 300] {
        for &kappa in &[1e-3, 1.0, 50.0, 1e3, 1e6] {
            let log_i = log_bessel_i(BesselOrder::vmf(p)?, kappa)?;
            println!(
                "{p:>6} {kappa:>10.0e} {log_i:>22.12} {:>20.16} {:>14.6e} {:>22.12}",
                bessel_ratio_a(p, kappa)?,
                bessel_ratio_a_complement(p, kappa)?,
                log_normalizer(p, kappa)?
            );
        }
    }
    Ok(())
}
