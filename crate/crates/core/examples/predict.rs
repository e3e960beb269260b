//! Next-record prediction: candidate pools of nearby records, ranked by the
//! full model and by the location-only baseline.
//!
//! `cargo run --example predict`

use shmm::data::{build_candidate_pools, evaluate_prediction, PoolConfig, RecordIndex};
use shmm::emission::EmissionConfig;
use shmm::hmm::{baum_welch, score_next, BaumWelchOptions, InitStrategy};
use shmm::synth::{sample_corpus, PlantedSpec};

fn main() -> shmm::Result<()> {
    // Four topics sharing one place and time window.
    let truth = PlantedSpec::text_signal(4, 10, 50.0, 21).build()?;
    let train = sample_corpus(&truth, 1000, 10, 22)?.traces;
    let test = sample_corpus(&truth, 2000, 10, 23)?.traces;
    let index = RecordIndex::from_traces(train.iter().chain(&test));
    let pool_cfg = PoolConfig::default();
    let pools = build_candidate_pools(&test, &index, &pool_cfg, 24)?;
    let short = pools.iter().filter(|p| p.insufficient_negatives).count();
    println!("{} pools of up to {} candidates ({short} short)", pools.len(), pool_cfg.pool_size);

    for (name, config) in [("shmm", EmissionConfig::shmm()), ("hmm", EmissionConfig::hmm())] {
        let fit = baum_welch(&train, 4, &config, &InitStrategy::default(), &BaumWelchOptions::default())?;
        let table = evaluate_prediction(&fit.model.compile()?, &test, &pools, &[1, 3, 5])?;
        let accs: Vec<String> = table.rows.iter().map(|r| format!("@{} {:.3}", r.k, r.accuracy)).collect();
        println!("{name:>5}: {}", accs.join("  "));

        if name == "shmm" {
            let (history, _) = test[0].split_last().unwrap();
            let ranked = score_next(&fit.model, history, &pools[0].candidates, 3)?;
            println!("       first pool, truth at {}: top 3 {ranked:?}", pools[0].truth_index);
        }
    }
    Ok(())
}
