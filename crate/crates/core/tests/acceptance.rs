//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits non-zero if any criterion fails.
//!
//! `cargo test --test acceptance`

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shmm::cli::summarize_model;
use shmm::data::{build_candidate_pools, evaluate_prediction, PoolConfig, RecordIndex, SemanticRecord};
use shmm::emission::{EmissionConfig, StateParams, TextModel, TextParams};
use shmm::hmm::{
    baum_welch, forward_backward, log_likelihood, log_sum_exp, score_next, viterbi, BaumWelchOptions,
    InitStrategy, ShmmModel, TrainedModel,
};
use shmm::special::{bessel_ratio_a, bessel_ratio_a_prime};
use shmm::synth::{
    align_states, run_experiment, sample_corpus, total_variation, Experiment, ExperimentParams, PlantedSpec,
    ORIGIN,
};
use shmm::vmf::{
    dot, estimate_kappa, log_normalizer, newton_kappa_from, ratio_residual, solve_kappa, uniform_sphere,
    KappaSolverOptions, ResultantStats, VmfParams, VmfSampler, KAPPA_MAX,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Newton residual below 1e-13 within three steps of the Banerjee start.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let params = ExperimentParams {
        p: 100,
        kappa: 100.0,
        n: 100_000,
        ..ExperimentParams::default()
    };
    let rows = run_experiment(Experiment::NewtonConvergence, &params, 1).expect("experiment");
    let secs = start.elapsed().as_secs_f64();
    let residuals: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.metric == "residual")
        .map(|r| (r.x, r.value))
        .collect();
    let best = residuals
        .iter()
        .filter(|(x, _)| (1.0..=3.0).contains(x))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let trace: Vec<String> = residuals.iter().map(|(x, v)| format!("{x}:{v:.1e}")).collect();
    outcome(
        best < 1e-13 && secs < 10.0,
        format!("residual trace [{}], {secs:.2}s", trace.join(", ")),
    )
}

struct RootProblem {
    p: usize,
    kappa: f64,
    r_bar: f64,
}

/// 50 problems with p uniform on [2, 200] and κ log-uniform on [0.5, 1000].
fn root_grid() -> Vec<RootProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    (0..50)
        .map(|_| {
            let p = rng.gen_range(2..=200);
            let kappa = rng.gen_range(0.5f64.ln()..1000f64.ln()).exp();
            RootProblem {
                p,
                kappa,
                r_bar: bessel_ratio_a(p, kappa).unwrap(),
            }
        })
        .collect()
}

/// Bisection on the signed residual until the bracket is two adjacent doubles.
fn bisection_root(p: usize, r_bar: f64) -> f64 {
    let (mut lo, mut hi) = (1e-12, KAPPA_MAX);
    assert!(ratio_residual(p, lo, r_bar).unwrap() < 0.0 && ratio_residual(p, hi, r_bar).unwrap() > 0.0);
    loop {
        // Geometric midpoints while the bracket spans orders of magnitude.
        let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if ratio_residual(p, mid, r_bar).unwrap() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if ratio_residual(p, lo, r_bar).unwrap().abs() <= ratio_residual(p, hi, r_bar).unwrap().abs() {
        lo
    } else {
        hi
    }
}

/// Quadratic convergence: `|e_{n+1}| / e_n² ∈ (0, 1)` wherever `e_n ∈ (1e-8, 1e-1)`.
///
/// `e_{n+1}` is only compared where it is resolvable, i.e. well above the
/// uncertainty of the root itself (κ rounding plus one residual ulp divided
/// by the slope of `A_p`).
fn criterion_2() -> Outcome {
    let start = Instant::now();
    let opts = KappaSolverOptions::default();
    let (mut checked, mut bad, mut safeguarded, mut worst) = (0usize, 0usize, 0usize, 0.0f64);
    for prob in root_grid() {
        let root = bisection_root(prob.p, prob.r_bar);
        let slope = bessel_ratio_a_prime(prob.p, root, bessel_ratio_a(prob.p, root).unwrap()).unwrap();
        let resolution = 4.0 * f64::EPSILON * (root + prob.r_bar.min(1.0 - prob.r_bar) / slope);
        let runs = [
            solve_kappa(prob.p, prob.r_bar, opts).unwrap(),
            newton_kappa_from(prob.p, prob.r_bar, 0.5 * root, opts).unwrap(),
        ];
        for est in runs {
            if est.safeguarded {
                safeguarded += 1;
                continue;
            }
            for w in est.trace.windows(2) {
                let (e0, e1) = ((w[0].kappa - root).abs(), (w[1].kappa - root).abs());
                if e0 > 1e-8 && e0 < 1e-1 && e1 > 1e3 * resolution {
                    let ratio = e1 / (e0 * e0);
                    checked += 1;
                    worst = worst.max(ratio);
                    if !(ratio > 0.0 && ratio < 1.0) {
                        bad += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad == 0 && checked >= 30 && secs < 30.0,
        format!(
            "{checked} iterate pairs checked, {bad} outside (0, 1), max ratio {worst:.3e}, \
             {safeguarded} safeguarded runs skipped, {secs:.2}s"
        ),
    )
}

/// Newton root equals the bisection root.
fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_at = (0, 0.0);
    for prob in root_grid() {
        let newton = solve_kappa(prob.p, prob.r_bar, KappaSolverOptions::default()).unwrap();
        let oracle = bisection_root(prob.p, prob.r_bar);
        let err = (newton.kappa - oracle).abs();
        if err > worst {
            worst = err;
            worst_at = (prob.p, prob.kappa);
        }
    }
    outcome(
        worst < 1e-10,
        format!("max |κ_newton - κ_bisect| = {worst:.2e} (p={}, κ={:.3})", worst_at.0, worst_at.1),
    )
}

/// `coth κ - 1/κ`, by its Laurent series where the literal form cancels.
fn a3_closed(k: f64) -> f64 {
    if k < 0.5 {
        let k2 = k * k;
        k / 3.0 - k * k2 / 45.0 + 2.0 * k * k2 * k2 / 945.0 - k * k2.powi(3) / 4725.0
            + 2.0 * k * k2.powi(4) / 93555.0
            - 1382.0 * k * k2.powi(5) / 638_512_875.0
    } else {
        1.0 / k.tanh() - 1.0 / k
    }
}

/// `log C_3(κ) = log κ - log 4π - log sinh κ` as `(-κ, rest)`: the large part
/// is exact, so the difference from a computed value is formed without
/// rounding.
fn log_c3_closed(k: f64) -> (f64, f64) {
    if k < 20.0 {
        (0.0, k.ln() - (4.0 * PI).ln() - k.sinh().ln())
    } else {
        let rest = k.ln() - (4.0 * PI).ln() + 2.0_f64.ln() - (-(-2.0 * k).exp()).ln_1p();
        (-k, rest)
    }
}

fn criterion_4() -> Outcome {
    let mut worst_a: f64 = 0.0;
    let mut worst_c: f64 = 0.0;
    for &k in &[0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
        let a = bessel_ratio_a(3, k).unwrap();
        worst_a = worst_a.max(((a - a3_closed(k)) / a3_closed(k)).abs());
        // Relative error of C is the absolute error of log C.
        let (big, rest) = log_c3_closed(k);
        let got = log_normalizer(3, k).unwrap();
        worst_c = worst_c.max(((got - big) - rest).abs());
    }
    outcome(
        worst_a < 1e-12 && worst_c < 1e-12,
        format!("max rel err A_3 {worst_a:.2e}, C_3 {worst_c:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let n = 1_000_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &(p, kappa)) in [(3usize, 1.0), (10, 20.0), (30, 100.0), (100, 100.0)].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i as u64);
        let mu = uniform_sphere(&mut rng, p);
        let params = VmfParams::new(mu.clone(), kappa).unwrap();
        let sampler = VmfSampler::new(&params).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut stats = ResultantStats::new(p);
        for j in 0..n {
            let m = sampler.draw(&mut rng);
            let t = dot(&mu, &m);
            sum += t;
            sum_sq += t * t;
            if j < 100_000 {
                stats.push(&m, 1.0);
            }
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let a = bessel_ratio_a(p, kappa).unwrap();
        let z = (mean - a) / se;
        let kappa_hat = estimate_kappa(&stats, KappaSolverOptions::default()).unwrap().kappa;
        let rel = (kappa_hat - kappa).abs() / kappa;
        pass &= z.abs() < 3.0 && rel < 0.05;
        parts.push(format!("(p={p}, κ={kappa}): z={z:+.2}, κ̂ rel err {rel:.3}"));
    }
    outcome(pass, parts.join("; "))
}

/// Uninformative starting model: uniform chain, states piled near the
/// origin with random topics.
fn poor_start(k: usize, dim: usize, seed: u64) -> ShmmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..k)
        .map(|_| StateParams {
            mu_t: rng.gen_range(40_000.0..46_000.0),
            sigma_t: 6.0 * 3600.0,
            mu_l: [ORIGIN[0] + rng.gen_range(-0.01..0.01), ORIGIN[1] + rng.gen_range(-0.01..0.01)],
            sigma_l: [[1e-2, 0.0], [0.0, 1e-2]],
            text: TextParams::Vmf(VmfParams::new(uniform_sphere(&mut rng, dim), 1.0).unwrap()),
        })
        .collect();
    let uniform = vec![1.0 / k as f64; k];
    ShmmModel::new(uniform.clone(), vec![uniform; k], states, EmissionConfig::shmm(), dim).unwrap()
}

struct PlantedRun {
    truth: ShmmModel,
    /// k-means start, then an uninformative start.
    fits: [TrainedModel; 2],
    secs: f64,
}

/// Fits the planted five-state corpus used by criteria 6 and 7.
fn planted_fit() -> PlantedRun {
    let truth = PlantedSpec::recovery(7).build().unwrap();
    let corpus = sample_corpus(&truth, 500, 20, 8).unwrap();
    let opts = BaumWelchOptions {
        rel_tol: 0.0,
        max_iters: 100,
        ..BaumWelchOptions::default()
    };
    let start = Instant::now();
    let fit = |init: InitStrategy| baum_welch(&corpus.traces, 5, &EmissionConfig::shmm(), &init, &opts).unwrap();
    let fits = [fit(InitStrategy::default()), fit(InitStrategy::Model(poor_start(5, 10, 77)))];
    PlantedRun {
        truth,
        fits,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_6(run: &PlantedRun) -> Outcome {
    let mut pass = run.secs < 120.0;
    let mut parts = Vec::new();
    for (name, fit) in ["k-means start", "uninformative start"].iter().zip(&run.fits) {
        let ll: Vec<f64> = fit.history.iter().map(|h| h.log_likelihood).collect();
        let steps = ll.len() - 1;
        let violations = ll.windows(2).filter(|w| w[1] < w[0] - 1e-8 * w[0].abs()).count();
        let worst_drop = ll.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
        pass &= violations == 0 && steps == 100;
        parts.push(format!(
            "{name}: {steps} iterations, {violations} violations, largest decrease {worst_drop:.2e}, \
             loglik {:.3} -> {:.3} -> {:.3}",
            ll[0], ll[1], ll[steps]
        ));
    }
    parts.push(format!("{:.2}s", run.secs));
    outcome(pass, parts.join("; "))
}

fn criterion_7(run: &PlantedRun) -> Outcome {
    let (truth, fit) = (&run.truth, &run.fits[0]);
    let perm = align_states(truth, &fit.model).unwrap();
    let est = fit.model.permuted(&perm).unwrap();
    let (mut tv, mut kappa_err, mut min_cos) = (0.0f64, 0.0f64, f64::INFINITY);
    for z in 0..truth.n_states {
        tv = tv.max(total_variation(&est.trans[z], &truth.trans[z]));
        let (a, b) = (est.states[z].text.vmf().unwrap(), truth.states[z].text.vmf().unwrap());
        kappa_err = kappa_err.max((a.kappa - b.kappa).abs() / b.kappa);
        min_cos = min_cos.min(dot(&a.mu, &b.mu));
    }
    outcome(
        tv < 0.05 && kappa_err < 0.10 && min_cos > 0.99,
        format!("max TV {tv:.4}, max κ rel err {kappa_err:.4}, min μ̂ᵀμ {min_cos:.5}"),
    )
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn random_instance(rng: &mut ChaCha8Rng, config: EmissionConfig) -> (ShmmModel, Vec<SemanticRecord>, Vec<SemanticRecord>) {
    let k = rng.gen_range(1..=4);
    let r = rng.gen_range(1..=6);
    let dim = rng.gen_range(2..=6);
    let states = (0..k)
        .map(|_| {
            let c = rng.gen_range(-0.4..0.4) * 1e-3;
            StateParams {
                mu_t: rng.gen_range(20_000.0..60_000.0),
                sigma_t: rng.gen_range(2_000.0..9_000.0),
                mu_l: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)],
                sigma_l: [[1e-3, c], [c, 1.5e-3]],
                text: match config.text_model {
                    TextModel::Vmf => TextParams::Vmf(
                        VmfParams::new(uniform_sphere(rng, dim), rng.gen_range(0.0..15.0)).unwrap(),
                    ),
                    TextModel::DiagGaussian => TextParams::DiagGaussian {
                        mean: uniform_sphere(rng, dim),
                        var: (0..dim).map(|_| rng.gen_range(0.05..0.4)).collect(),
                    },
                    TextModel::None => TextParams::None,
                },
            }
        })
        .collect();
    let pi = random_distribution(rng, k);
    let trans = (0..k).map(|_| random_distribution(rng, k)).collect();
    let model = ShmmModel::new(pi, trans, states, config, dim).unwrap();
    let mut record = |i: usize| SemanticRecord {
        user_id: "u".into(),
        t_abs: 900.0 * i as f64,
        t_day: rng.gen_range(10_000.0..70_000.0),
        loc: [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)],
        embedding: uniform_sphere(rng, dim),
        raw_text: None,
    };
    let records = (0..r).map(&mut record).collect();
    let candidates = (0..5).map(|i| record(r + i)).collect();
    (model, records, candidates)
}

/// Every state path of length `r` over `k` states.
fn all_paths(k: usize, r: usize) -> Vec<Vec<usize>> {
    (0..k.pow(r as u32))
        .map(|mut code| {
            (0..r)
                .map(|_| {
                    let z = code % k;
                    code /= k;
                    z
                })
                .collect()
        })
        .collect()
}

fn path_log_joint(model: &ShmmModel, emissions: &[Vec<f64>], path: &[usize]) -> f64 {
    let mut total = model.pi[path[0]].ln() + emissions[0][path[0]];
    for t in 1..path.len() {
        total += model.trans[path[t - 1]][path[t]].ln() + emissions[t][path[t]];
    }
    total
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let configs = [EmissionConfig::shmm(), EmissionConfig::ghmm(), EmissionConfig::st_hmm(), EmissionConfig::hmm()];
    let (mut ll_err, mut score_err, mut vit_err, mut path_mismatch) = (0.0f64, 0.0f64, 0.0f64, 0);
    for case in 0..100 {
        let (model, records, candidates) = random_instance(&mut rng, configs[case % configs.len()]);
        let compiled = model.compile().unwrap();
        let emissions = compiled.emission_matrix(&records).unwrap();
        let paths = all_paths(model.n_states, records.len());
        let joints: Vec<f64> = paths.iter().map(|p| path_log_joint(&model, &emissions, p)).collect();

        let brute_ll = log_sum_exp(joints.iter().copied());
        ll_err = ll_err.max((forward_backward(&model, &records).unwrap().log_likelihood - brute_ll).abs());
        ll_err = ll_err.max((log_likelihood(&model, &records).unwrap() - brute_ll).abs());

        let (best, best_lp) = joints
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let (vpath, vlp) = viterbi(&model, &records).unwrap();
        if vpath != paths[best] {
            path_mismatch += 1;
        }
        vit_err = vit_err.max((vlp - best_lp).abs());

        let ranked = score_next(&model, &records, &candidates, candidates.len()).unwrap();
        for rc in ranked {
            let mut extended = emissions.clone();
            extended.push(compiled.log_emissions(&candidates[rc.index]).unwrap());
            let brute = log_sum_exp(
                all_paths(model.n_states, records.len() + 1)
                    .iter()
                    .map(|p| path_log_joint(&model, &extended, p)),
            );
            score_err = score_err.max((rc.score - brute).abs());
        }
    }
    outcome(
        ll_err < 1e-9 && vit_err < 1e-9 && score_err < 1e-9 && path_mismatch == 0,
        format!(
            "100 instances: max err loglik {ll_err:.1e}, viterbi {vit_err:.1e}, score_next {score_err:.1e}, \
             {path_mismatch} path mismatches"
        ),
    )
}

/// Accuracy@1 of the full model and of the location-only preset on a corpus
/// whose states share space and time.
fn text_vs_location(kappa: f64) -> (f64, f64, usize) {
    let truth = PlantedSpec::text_signal(4, 10, kappa, 21).build().unwrap();
    let train = sample_corpus(&truth, 1000, 10, 22).unwrap().traces;
    let test = sample_corpus(&truth, 2000, 10, 23).unwrap().traces;
    let index = RecordIndex::from_traces(train.iter().chain(&test));
    let pools = build_candidate_pools(&test, &index, &PoolConfig::default(), 24).unwrap();
    let acc = |config: EmissionConfig| {
        let fit = baum_welch(&train, 4, &config, &InitStrategy::default(), &BaumWelchOptions::default()).unwrap();
        let table = evaluate_prediction(&fit.model.compile().unwrap(), &test, &pools, &[1]).unwrap();
        table.at(1).unwrap()
    };
    (acc(EmissionConfig::shmm()), acc(EmissionConfig::hmm()), pools.len())
}

fn criterion_9() -> Outcome {
    let (shmm_on, hmm_on, n) = text_vs_location(50.0);
    let (shmm_off, hmm_off, _) = text_vs_location(0.0);
    let gap = (shmm_off - hmm_off).abs();
    outcome(
        shmm_on > hmm_on && gap < 0.01 && n == 2000,
        format!(
            "κ=50: SHMM {shmm_on:.4} vs HMM {hmm_on:.4}; κ=0: SHMM {shmm_off:.4} vs HMM {hmm_off:.4} \
             (gap {:.2} pp) over {n} pools",
            100.0 * gap
        ),
    )
}

/// Substitute checks for results that need the original data: ordering of
/// recovered concentrations on planted topics, and superlinear growth of EM
/// time in the number of states.
fn criterion_10() -> Outcome {
    let planted = [10.0, 50.0, 200.0];
    let truth = PlantedSpec {
        kappas: planted.to_vec(),
        dim: 10,
        shared_space: false,
        cycle: None,
        seed: 31,
    }
    .build()
    .unwrap();
    let corpus = sample_corpus(&truth, 300, 20, 32).unwrap();
    let fit = baum_welch(&corpus.traces, 3, &EmissionConfig::shmm(), &InitStrategy::default(), &BaumWelchOptions::default())
        .unwrap();
    let est = fit.model.permuted(&align_states(&truth, &fit.model).unwrap()).unwrap();
    let rows = summarize_model(&est, None, 0).unwrap();
    let kappas: Vec<f64> = rows.iter().map(|r| r.kappa.unwrap()).collect();
    let lowest = (0..3).min_by(|&a, &b| kappas[a].total_cmp(&kappas[b])).unwrap();
    let ordered = kappas.windows(2).all(|w| w[0] < w[1]);

    let timing_truth = PlantedSpec::recovery(7).build().unwrap();
    let timing_corpus = sample_corpus(&timing_truth, 200, 20, 9).unwrap().traces;
    let ks = [5usize, 10, 20, 40];
    let opts = BaumWelchOptions {
        rel_tol: 0.0,
        max_iters: 5,
        ..BaumWelchOptions::default()
    };
    let times: Vec<f64> = ks
        .iter()
        .map(|&k| {
            (0..3)
                .map(|_| {
                    let fit = baum_welch(&timing_corpus, k, &EmissionConfig::shmm(), &InitStrategy::default(), &opts)
                        .unwrap();
                    fit.history.last().unwrap().seconds
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();

    let timing: Vec<String> = ks.iter().zip(&times).map(|(k, t)| format!("K={k}: {t:.3}s")).collect();
    outcome(
        lowest == 0 && ordered && slope > 1.0,
        format!(
            "κ̂ for planted {planted:?}: [{:.1}, {:.1}, {:.1}]; EM time {} (log-log slope {slope:.2}). \
             Real-data accuracies, the margin over GMove, real-topic κ ordering and absolute \
             training times are not reproducible without the original data",
            kappas[0],
            kappas[1],
            kappas[2],
            timing.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    let planted = planted_fit();
    report(6, criterion_6(&planted));
    report(7, criterion_7(&planted));
    report(8, criterion_8());
    report(9, criterion_9());
    report(10, criterion_10());

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
