//! Fits a five-state model to traces drawn from a planted model and compares
//! the estimate with the truth after optimal state alignment.
//!
//! `cargo run --example train_planted`

use shmm::emission::EmissionConfig;
use shmm::hmm::{baum_welch, log_likelihood, viterbi, BaumWelchOptions, InitStrategy};
use shmm::synth::{align_states, sample_corpus, total_variation, PlantedSpec};
use shmm::vmf::dot;

fn main() -> shmm::Result<()> {
    let truth = PlantedSpec::recovery(7).build()?;
    let corpus = sample_corpus(&truth, 500, 20, 8)?;
    let fit = baum_welch(
        &corpus.traces,
        5,
        &EmissionConfig::shmm(),
        &InitStrategy::default(),
        &BaumWelchOptions::default(),
    )?;
    for h in &fit.history {
        println!("iteration {:>3}: log-likelihood {:.6} ({:.3}s)", h.iteration, h.log_likelihood, h.seconds);
    }
    let generator: f64 = corpus
        .traces
        .iter()
        .map(|t| log_likelihood(&truth, &t.records))
        .sum::<shmm::Result<f64>>()?;
    println!("generator log-likelihood {generator:.6}, converged = {}", fit.converged);

    let est = fit.model.permuted(&align_states(&truth, &fit.model)?)?;
    println!("\nstate  mean time  kappa (true)      mu.mu_true  TV(row)");
    for z in 0..5 {
        let (a, b) = (est.states[z].text.vmf().unwrap(), truth.states[z].text.vmf().unwrap());
        println!(
            "{z:>5}  {:>8.2}h  {:>7.2} ({:>5.1})  {:>10.6}  {:.4}",
            est.states[z].mu_t / 3600.0,
            a.kappa,
            b.kappa,
            dot(&a.mu, &b.mu),
            total_variation(&est.trans[z], &truth.trans[z])
        );
    }

    let (path, lp) = viterbi(&est, &corpus.traces[0].records)?;
    println!("\ndecoded first trace: {path:?} (log-prob {lp:.3})");
    println!("hidden path:          {:?}", corpus.paths[0]);
    Ok(())
}
