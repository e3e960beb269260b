//! Command-line pipeline: `preprocess`, `train`, `summarize`, `predict` and
//! `synth`. Each command is a function of a [`RunConfig`] so it can be driven
//! from code as well as from the `shmm` binary.
//!
//! Settings come from an optional TOML file; command-line flags override it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    build_candidate_pools, day_seconds, evaluate_prediction, read_corpus, read_raw_records,
    segment_history, split_corpus, write_corpus, PoolConfig, RecordIndex, SemanticRecord, Trace,
};
use crate::emission::EmissionConfig;
use crate::error::{Error, Result};
use crate::hmm::{baum_welch, load_model, save_model, BaumWelchOptions, InitStrategy, ShmmModel};
use crate::synth::{run_experiment, write_rows_csv, Experiment, ExperimentParams};
use crate::text::{embed_message, load_keyword_table, nearest_keywords, tokenize, IdfVariant};

pub const CORPUS_FILE: &str = "corpus.ndjson";
pub const MODEL_FILE: &str = "model.json";
pub const LOGLIK_FILE: &str = "loglik.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub delta_t_hours: f64,
    pub min_len: usize,
    /// Fixed offset of local time from UTC, used for time of day.
    pub utc_offset_hours: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            delta_t_hours: 6.0,
            min_len: 2,
            utc_offset_hours: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub kmeans_iters: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        let d = BaumWelchOptions::default();
        EmConfig {
            rel_tol: d.rel_tol,
            max_iters: d.max_iters,
            kmeans_iters: 100,
        }
    }
}

/// Every setting of a run. Paths are relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Label written to the metrics file.
    pub dataset: String,
    /// Raw NDJSON records (`preprocess`).
    pub input: Option<PathBuf>,
    /// Keyword-vector file (`preprocess`, `summarize`).
    pub embeddings: Option<PathBuf>,
    /// Trace corpus; defaults to `<output_dir>/corpus.ndjson`.
    pub corpus: Option<PathBuf>,
    /// Model file; defaults to `<output_dir>/model.json`.
    pub model: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub n_states: usize,
    /// Emission preset: `shmm`, `ghmm`, `st-hmm` or `hmm`.
    pub preset: String,
    pub sigma_t_floor: Option<f64>,
    pub var_floor: Option<f64>,
    pub idf: IdfVariant,
    pub train_frac: f64,
    pub k_list: Vec<usize>,
    pub k_keywords: usize,
    pub segment: SegmentConfig,
    pub em: EmConfig,
    pub pool: PoolConfig,
    pub synth: ExperimentParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "dataset".into(),
            input: None,
            embeddings: None,
            corpus: None,
            model: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: 0,
            n_states: 10,
            preset: "shmm".into(),
            sigma_t_floor: None,
            var_floor: None,
            idf: IdfVariant::Smooth,
            train_frac: 0.7,
            k_list: vec![1, 2, 3, 4, 5],
            k_keywords: 10,
            segment: SegmentConfig::default(),
            em: EmConfig::default(),
            pool: PoolConfig::default(),
            synth: ExperimentParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn emission(&self) -> Result<EmissionConfig> {
        let mut c = EmissionConfig::preset(&self.preset)?;
        if let Some(f) = self.sigma_t_floor {
            c.sigma_t_floor = f;
        }
        if let Some(f) = self.var_floor {
            c.var_floor = f;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn em_options(&self) -> BaumWelchOptions {
        BaumWelchOptions {
            rel_tol: self.em.rel_tol,
            max_iters: self.em.max_iters,
            ..BaumWelchOptions::default()
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.output_dir.join(CORPUS_FILE))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output_dir.join(MODEL_FILE))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::Config("n_states must be at least 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config("train_frac must lie in (0, 1)".into()));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("k_list must hold positive integers".into()));
        }
        if self.pool.pool_size == 0 || !(self.pool.dist_thresh_m >= 0.0) || !(self.pool.time_thresh_s >= 0.0) {
            return Err(Error::Config("invalid candidate pool settings".into()));
        }
        if !(self.segment.delta_t_hours > 0.0) || !self.segment.utc_offset_hours.is_finite() {
            return Err(Error::Config("invalid segmentation settings".into()));
        }
        self.emission()?;
        Ok(())
    }
}

fn require_file(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::Config(format!("no {what} path configured")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} '{}' does not exist", p.display())));
    }
    Ok(p.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub raw_records: usize,
    pub malformed_lines: usize,
    pub no_known_tokens: usize,
    pub embedded_records: usize,
    pub users: usize,
    pub traces: usize,
    pub records_in_traces: usize,
    pub short_segments: usize,
    pub records_in_short_segments: usize,
    pub config: RunConfig,
}

/// Raw records → embedded, segmented trace corpus.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessReport> {
    let input = require_file(cfg.input.as_ref(), "input")?;
    let emb_path = cfg
        .embeddings
        .clone()
        .ok_or_else(|| Error::Config("no embeddings path configured".into()))?;
    let mut table = load_keyword_table(&emb_path)?;
    fs::create_dir_all(&cfg.output_dir)?;

    let (raw, malformed) = read_raw_records(&input)?;
    let tokens: Vec<Vec<String>> = raw.iter().map(|r| tokenize(&r.text)).collect();
    if !tokens.is_empty() {
        table.fit_idf(&tokens, cfg.idf)?;
    }

    let offset = cfg.segment.utc_offset_hours * 3600.0;
    let mut by_user: BTreeMap<&str, Vec<SemanticRecord>> = BTreeMap::new();
    let mut no_known = 0;
    for (r, toks) in raw.iter().zip(&tokens) {
        match embed_message(toks, &table) {
            Ok(embedding) => {
                let t_abs = r.t_abs()?;
                by_user.entry(&r.user_id).or_default().push(SemanticRecord {
                    user_id: r.user_id.clone(),
                    t_abs,
                    t_day: day_seconds(t_abs, offset),
                    loc: [r.lon, r.lat],
                    embedding,
                    raw_text: Some(r.text.clone()),
                });
            }
            Err(Error::NoKnownTokens) => {
                log::debug!("dropping record of user {} with no known tokens", r.user_id);
                no_known += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let embedded = raw.len() - no_known;

    let mut traces: Vec<Trace> = Vec::new();
    let (mut short, mut short_records) = (0, 0);
    let users = by_user.len();
    for (_, mut records) in by_user {
        records.sort_by(|a, b| a.t_abs.total_cmp(&b.t_abs));
        let seg = segment_history(&records, cfg.segment.delta_t_hours * 3600.0, cfg.segment.min_len);
        short += seg.discarded_segments;
        short_records += seg.discarded_records;
        traces.extend(seg.traces);
    }
    let out = cfg.output_dir.join(CORPUS_FILE);
    write_corpus(&out, &traces)?;
    let report = PreprocessReport {
        raw_records: raw.len(),
        malformed_lines: malformed,
        no_known_tokens: no_known,
        embedded_records: embedded,
        users,
        traces: traces.len(),
        records_in_traces: traces.iter().map(Trace::len).sum(),
        short_segments: short,
        records_in_short_segments: short_records,
        config: cfg.clone(),
    };
    write_json(&cfg.output_dir.join("preprocess_report.json"), &report)?;
    log::info!("wrote {} traces to {}", report.traces, out.display());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_test: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    pub reseeded_states: usize,
    /// Wall time of the EM iterations alone.
    pub em_seconds: f64,
    pub config: RunConfig,
}

fn load_split(cfg: &RunConfig) -> Result<(Vec<Trace>, Vec<Trace>)> {
    let corpus = read_corpus(&require_file(Some(&cfg.corpus_path()), "corpus")?)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    split_corpus(corpus, cfg.train_frac, cfg.seed)
}

/// Fits a model on the training split of the corpus.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (train, test) = load_split(cfg)?;
    let emission = cfg.emission()?;
    let init = InitStrategy::KMeans {
        seed: cfg.seed,
        max_iters: cfg.em.kmeans_iters,
    };
    let fit = baum_welch(&train, cfg.n_states, &emission, &init, &cfg.em_options())?;
    fs::create_dir_all(&cfg.output_dir)?;
    save_model(&fit.model, &cfg.model_path())?;

    let mut w = csv::Writer::from_path(cfg.output_dir.join(LOGLIK_FILE))?;
    w.write_record(["iteration", "loglik", "seconds"])?;
    for h in &fit.history {
        w.write_record([
            h.iteration.to_string(),
            format!("{:.17e}", h.log_likelihood),
            format!("{:.6}", h.seconds),
        ])?;
    }
    w.flush()?;

    let report = TrainReport {
        n_train: train.len(),
        n_test: test.len(),
        iterations: fit.history.len().saturating_sub(1),
        converged: fit.converged,
        final_log_likelihood: fit.final_log_likelihood(),
        reseeded_states: fit.history.iter().map(|h| h.reseeded.len()).sum(),
        em_seconds: fit.history.last().map_or(0.0, |h| h.seconds),
        config: cfg.clone(),
    };
    write_json(&cfg.output_dir.join("train_report.json"), &report)?;
    Ok(report)
}

/// One row of the state summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub state: usize,
    pub mu_lon: f64,
    pub mu_lat: f64,
    pub mu_t_hours: f64,
    pub sigma_t_hours: f64,
    pub kappa: Option<f64>,
    /// Space-separated nearest keywords of the topic direction.
    pub keywords: String,
    /// `state:probability` pairs of the most likely successors.
    pub top_transitions: String,
}

/// Per-state summaries; keywords need a keyword table with matching
/// dimension.
pub fn summarize_model(
    model: &ShmmModel,
    table: Option<&crate::text::KeywordTable>,
    k_keywords: usize,
) -> Result<Vec<StateSummary>> {
    model
        .states
        .iter()
        .enumerate()
        .map(|(z, s)| {
            let vmf = s.text.vmf();
            let keywords = match (vmf, table) {
                (Some(p), Some(t)) => nearest_keywords(&p.mu, t, k_keywords)?
                    .into_iter()
                    .map(|(w, _)| w)
                    .collect::<Vec<_>>()
                    .join(" "),
                _ => String::new(),
            };
            let mut succ: Vec<(usize, f64)> = model.trans[z].iter().copied().enumerate().collect();
            succ.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let top_transitions = succ
                .iter()
                .take(5)
                .map(|(j, p)| format!("{j}:{p:.6}"))
                .collect::<Vec<_>>()
                .join(";");
            Ok(StateSummary {
                state: z,
                mu_lon: s.mu_l[0],
                mu_lat: s.mu_l[1],
                mu_t_hours: s.mu_t / 3600.0,
                sigma_t_hours: s.sigma_t / 3600.0,
                kappa: vmf.map(|p| p.kappa),
                keywords,
                top_transitions,
            })
        })
        .collect()
}

/// Writes the state summary table of the configured model.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<Vec<StateSummary>> {
    let model = load_model(&require_file(Some(&cfg.model_path()), "model")?)?;
    let table = match &cfg.embeddings {
        Some(p) => {
            let t = load_keyword_table(p)?;
            if model.config.uses_text() && t.dim() != model.embedding_dim {
                return Err(Error::DimensionMismatch {
                    expected: model.embedding_dim,
                    found: t.dim(),
                });
            }
            Some(t)
        }
        None => None,
    };
    let rows = summarize_model(&model, table.as_ref(), cfg.k_keywords)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join(SUMMARY_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub accuracy: f64,
    pub n_test: usize,
    pub pool_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub metrics: Vec<MetricRow>,
    pub n_test: usize,
    pub skipped_short_traces: usize,
    pub insufficient_pools: usize,
    pub config: RunConfig,
}

/// Accuracy@K of the configured model on the held-out split.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictReport> {
    cfg.validate()?;
    let model = load_model(&require_file(Some(&cfg.model_path()), "model")?)?;
    let (train, test) = load_split(cfg)?;
    let index = RecordIndex::from_traces(train.iter().chain(&test));
    let total = test.len();
    let test: Vec<Trace> = test.into_iter().filter(|t| t.len() >= 2).collect();
    let pools = build_candidate_pools(&test, &index, &cfg.pool, cfg.seed)?;
    let insufficient = pools.iter().filter(|p| p.insufficient_negatives).count();
    let table = evaluate_prediction(&model.compile()?, &test, &pools, &cfg.k_list)?;
    let metrics: Vec<MetricRow> = table
        .rows
        .iter()
        .map(|r| MetricRow {
            dataset: cfg.dataset.clone(),
            k: r.k,
            accuracy: r.accuracy,
            n_test: r.n,
            pool_size: cfg.pool.pool_size,
            seed: cfg.seed,
        })
        .collect();
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join(METRICS_FILE))?;
    for m in &metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    let report = PredictReport {
        metrics,
        n_test: test.len(),
        skipped_short_traces: total - test.len(),
        insufficient_pools: insufficient,
        config: cfg.clone(),
    };
    write_json(&cfg.output_dir.join("predict_report.json"), &report)?;
    Ok(report)
}

/// Runs a synthetic experiment and writes `synth_<name>.csv`.
pub fn cmd_synth(cfg: &RunConfig, experiment: Experiment) -> Result<PathBuf> {
    let rows = run_experiment(experiment, &cfg.synth, cfg.seed)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let name = serde_json::to_value(experiment)?
        .as_str()
        .unwrap_or("experiment")
        .to_string();
    let path = cfg.output_dir.join(format!("synth_{name}.csv"));
    write_rows_csv(fs::File::create(&path)?, &rows)?;
    Ok(path)
}

#[derive(Debug, Parser)]
#[command(name = "shmm", version, about = "Spherical hidden Markov models for semantic traces")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed and segment raw NDJSON records into a trace corpus.
    Preprocess(PreprocessArgs),
    /// Fit a model with Baum-Welch.
    Train(TrainArgs),
    /// Tabulate per-state locations, times, concentrations and keywords.
    Summarize(SummarizeArgs),
    /// Evaluate next-record prediction accuracy@K.
    Predict(PredictArgs),
    /// Run a synthetic concentration-estimation experiment.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of latent states.
    #[arg(long)]
    pub states: Option<usize>,
    /// Emission preset: shmm, ghmm, st-hmm, hmm.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Keywords listed per state.
    #[arg(long)]
    pub keywords: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated list of K values.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub pool_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// The file configuration with every given flag applied on top.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.threads, self.threads);
        set(&mut cfg.output_dir, self.output_dir.clone());
        match &self.command {
            Command::Preprocess(a) => {
                cfg.input = a.input.clone().or(cfg.input);
                cfg.embeddings = a.embeddings.clone().or(cfg.embeddings);
            }
            Command::Train(a) => {
                cfg.corpus = a.corpus.clone().or(cfg.corpus);
                cfg.model = a.model.clone().or(cfg.model);
                set(&mut cfg.n_states, a.states);
                set(&mut cfg.preset, a.preset.clone());
                set(&mut cfg.em.max_iters, a.max_iters);
                set(&mut cfg.em.rel_tol, a.rel_tol);
            }
            Command::Summarize(a) => {
                cfg.model = a.model.clone().or(cfg.model);
                cfg.embeddings = a.embeddings.clone().or(cfg.embeddings);
                set(&mut cfg.k_keywords, a.keywords);
            }
            Command::Predict(a) => {
                cfg.model = a.model.clone().or(cfg.model);
                cfg.corpus = a.corpus.clone().or(cfg.corpus);
                set(&mut cfg.k_list, a.k.clone());
                set(&mut cfg.pool.pool_size, a.pool_size);
            }
            Command::Synth(a) => {
                set(&mut cfg.synth.p, a.p);
                set(&mut cfg.synth.kappa, a.kappa);
                set(&mut cfg.synth.n, a.n);
                set(&mut cfg.synth.repeats, a.repeats);
            }
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<()> {
        let cfg = self.resolve_config()?;
        if cfg.threads > 0 {
            // Fails only if a pool already exists, e.g. when called twice in-process.
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
                log::debug!("keeping existing thread pool: {e}");
            }
        }
        match &self.command {
            Command::Preprocess(_) => {
                let r = cmd_preprocess(&cfg)?;
                println!(
                    "{} records -> {} traces ({} without known tokens, {} malformed)",
                    r.raw_records, r.traces, r.no_known_tokens, r.malformed_lines
                );
            }
            Command::Train(_) => {
                let r = cmd_train(&cfg)?;
                println!(
                    "trained {} states on {} traces: log-likelihood {:.6} after {} iterations{}",
                    cfg.n_states,
                    r.n_train,
                    r.final_log_likelihood,
                    r.iterations,
                    if r.converged { "" } else { " (not converged)" }
                );
            }
            Command::Summarize(_) => {
                let rows = cmd_summarize(&cfg)?;
                println!("summarized {} states", rows.len());
            }
            Command::Predict(_) => {
                let r = cmd_predict(&cfg)?;
                for m in &r.metrics {
                    println!("accuracy@{} = {:.4}", m.k, m.accuracy);
                }
            }
            Command::Synth(a) => {
                let path = cmd_synth(&cfg, a.experiment)?;
                println!("wrote {}", path.display());
            }
        }
        Ok(())
    }
}
