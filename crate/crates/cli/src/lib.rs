//! The `orderflow` command line.
//!
//! Subcommands: `validate`, `analyze`, `cluster`, `synth`. Outputs are flat
//! JSON and CSV files keyed by `<date>_<ticker>`. Per-day work runs on a
//! rayon pool of `--jobs` threads and is gathered in key order, so output
//! bytes do not depend on the thread count.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use orderflow::analysis::{analyze_day, AnalysisOptions, DayAnalysis};
use orderflow::book::ReplayError;
use orderflow::clustering::{distance_matrix, select_k, ClusterError, Ecdf};
use orderflow::ingest::{load_instrument_day, IngestError};
use orderflow::mo::write_market_orders_jsonl;
use orderflow::observables::ImpactSample;
use orderflow::synth::{generate_cohort, RegimeParams, SynthError, PRESETS};
use orderflow::{InstrumentDay, SessionConfig, Side, ValidationReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AnalysisArgs, ClusterArgs, FileConfig, Overrides, RunConfig, SessionArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_COMPUTE: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{failed} of {total} files failed validation")]
    ValidationFailed { failed: usize, total: usize, code: i32 },
    #[error("invalid synthetic parameters: {0}")]
    Synth(#[from] SynthError),
    #[error("{context}: {message}")]
    Compute { context: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_USAGE,
            CliError::Ingest(e) => ingest_exit_code(e),
            CliError::ValidationFailed { code, .. } => *code,
            CliError::Synth(_) => EXIT_VALIDATION,
            CliError::Compute { .. } => EXIT_COMPUTE,
        }
    }

    fn compute(context: impl Into<String>, message: impl ToString) -> CliError {
        CliError::Compute {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

fn ingest_exit_code(e: &IngestError) -> i32 {
    match e {
        IngestError::Io { .. } => EXIT_IO,
        IngestError::Parse { .. } | IngestError::Empty(_) | IngestError::BadFileName(_) => EXIT_PARSE,
        IngestError::Validation { .. } => EXIT_VALIDATION,
    }
}

#[derive(Debug, Parser)]
#[command(name = "orderflow", version, about = "Limit-order-book analytics over order-flow message files")]
pub struct Cli {
    /// TOML file with defaults for any flag; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: number of inputs, capped by available cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check message files for parse errors and internal contradictions
    Validate {
        /// Message files or directories of `YYYYMMDD_TICKER.csv` files
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Per instrument-day statistics, histograms and impact tables
    Analyze {
        /// Message files or directories of `YYYYMMDD_TICKER.csv` files
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory (default out)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// KS distance matrix over in-spread relative prices and k-means clustering
    Cluster {
        /// Message files or directories of `YYYYMMDD_TICKER.csv` files
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory (default out)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
    /// Generate synthetic instrument-days with ground truth
    Synth {
        /// TOML file with `n_per_regime`, `seed` and `[[regimes]]` tables
        #[arg(long)]
        params: Option<PathBuf>,
        /// Regime preset, repeatable (default: all presets)
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: Vec<String>,
        /// Instrument-days per regime (default 1)
        #[arg(long)]
        per_regime: Option<usize>,
        /// Master seed; each day draws from a stream derived from it
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the hidden-trade rate of every regime
        #[arg(long)]
        hidden_rate: Option<f64>,
        /// Caps the session events of every day
        #[arg(long)]
        max_events: Option<usize>,
        /// Output directory (default out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?;
    match &cli.command {
        Command::Validate { inputs, session } => {
            let cfg = RunConfig::resolve(
                file.as_ref(),
                Overrides {
                    session: Some(session),
                    analysis: None,
                    cluster: None,
                    out: None,
                    jobs: cli.jobs,
                },
            )?;
            cmd_validate(inputs, &cfg)
        }
        Command::Analyze {
            inputs,
            out,
            session,
            analysis,
        } => {
            let cfg = RunConfig::resolve(
                file.as_ref(),
                Overrides {
                    session: Some(session),
                    analysis: Some(analysis),
                    cluster: None,
                    out: out.as_deref(),
                    jobs: cli.jobs,
                },
            )?;
            cmd_analyze(inputs, &cfg)
        }
        Command::Cluster {
            inputs,
            out,
            session,
            cluster,
        } => {
            let cfg = RunConfig::resolve(
                file.as_ref(),
                Overrides {
                    session: Some(session),
                    analysis: None,
                    cluster: Some(cluster),
                    out: out.as_deref(),
                    jobs: cli.jobs,
                },
            )?;
            cmd_cluster(inputs, &cfg).map(|_| ())
        }
        Command::Synth {
            params,
            preset,
            per_regime,
            seed,
            hidden_rate,
            max_events,
            out,
        } => {
            let out = out
                .clone()
                .or_else(|| file.as_ref().and_then(|f| f.out.clone()))
                .unwrap_or_else(|| PathBuf::from("out"));
            let mut plan = match params {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            if !preset.is_empty() {
                plan.regimes = preset.iter().map(|p| RegimeSpec::preset(p)).collect();
            }
            if let Some(n) = per_regime {
                plan.n_per_regime = *n;
            }
            if let Some(s) = seed.or(file.as_ref().and_then(|f| f.seed)) {
                plan.seed = s;
            }
            let mut regimes = plan.resolve()?;
            for r in &mut regimes {
                if let Some(h) = hidden_rate {
                    r.hidden_rate = *h;
                }
                if max_events.is_some() {
                    r.max_events = *max_events;
                }
            }
            let jobs = cli.jobs.or(file.as_ref().and_then(|f| f.jobs));
            cmd_synth(&regimes, plan.n_per_regime, plan.seed, &out, jobs)
        }
    }
}

/// Expands directories to their `*.csv` files; results are sorted and deduplicated.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = std::fs::read_dir(input).map_err(|source| CliError::Io {
                path: input.clone(),
                source,
            })?;
            for entry in entries {
                let path = entry
                    .map_err(|source| CliError::Io {
                        path: input.clone(),
                        source,
                    })?
                    .path();
                if path.is_file() && path.extension().is_some_and(|e| e == "csv") {
                    files.push(path);
                }
            }
        } else {
            files.push(input.clone());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

fn thread_pool(jobs: Option<usize>, work_items: usize) -> Result<rayon::ThreadPool, CliError> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let threads = jobs.unwrap_or_else(|| work_items.clamp(1, cores));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::compute("thread pool", e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ValidationLine<'a> {
    file: String,
    ok: bool,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a ValidationReport>,
}

/// Prints one JSON line per file to stdout. Fails with the exit code of the
/// first failing file.
pub fn cmd_validate(inputs: &[PathBuf], cfg: &RunConfig) -> Result<(), CliError> {
    let files = expand_inputs(inputs)?;
    let pool = thread_pool(cfg.jobs, files.len())?;
    let results: Vec<Result<ValidationReport, IngestError>> = pool.install(|| {
        files
            .par_iter()
            .map(|f| load_instrument_day(f, &cfg.session).map(|(_, report)| report))
            .collect()
    });
    let mut failed = 0;
    let mut first_code = None;
    for (file, result) in files.iter().zip(&results) {
        let line = match result {
            Ok(report) => ValidationLine {
                file: file.display().to_string(),
                ok: true,
                exit_code: EXIT_OK,
                error: None,
                report: Some(report),
            },
            Err(e) => {
                failed += 1;
                let code = ingest_exit_code(e);
                first_code.get_or_insert(code);
                ValidationLine {
                    file: file.display().to_string(),
                    ok: false,
                    exit_code: code,
                    error: Some(e.to_string()),
                    report: match e {
                        IngestError::Validation { report, .. } => Some(report),
                        _ => None,
                    },
                }
            }
        };
        println!("{}", serde_json::to_string(&line).expect("serializable"));
    }
    match first_code {
        None => Ok(()),
        Some(code) => Err(CliError::ValidationFailed {
            failed,
            total: files.len(),
            code,
        }),
    }
}

fn load_all(files: &[PathBuf], cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Vec<InstrumentDay>, CliError> {
    let days: Vec<InstrumentDay> = pool.install(|| {
        files
            .par_iter()
            .map(|f| load_instrument_day(f, &cfg.session).map(|(day, _)| day))
            .collect::<Result<_, _>>()
    })?;
    let mut keyed: BTreeMap<String, InstrumentDay> = BTreeMap::new();
    for day in days {
        if keyed.contains_key(&day.key()) {
            return Err(CliError::Config(format!("instrument-day {} given twice", day.key())));
        }
        keyed.insert(day.key(), day);
    }
    Ok(keyed.into_values().collect())
}

fn analyze_all(
    days: &[InstrumentDay],
    session: &SessionConfig,
    pool: &rayon::ThreadPool,
) -> Result<Vec<DayAnalysis>, CliError> {
    pool.install(|| {
        days.par_iter()
            .map(|d| analyze_day(d, session).map_err(|e: ReplayError| CliError::compute(d.key(), e)))
            .collect()
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn impact_csv(samples: &[ImpactSample]) -> String {
    let mut s = String::from(
        "first_ts,side,visible_volume,quote_volume,relative_volume,return,gap_ticks,midpoint_before_x2,midpoint_after_x2,hidden_trades\n",
    );
    for r in samples {
        let side = match r.side {
            Side::Buy => "buy",
            Side::Sell => "sell",
        };
        let _ = writeln!(
            s,
            "{},{side},{},{},{},{},{},{},{},{}",
            r.first_ts,
            r.visible_volume,
            r.quote_volume,
            r.relative_volume,
            r.ret,
            r.gap_ticks,
            r.midpoint_before_x2.0,
            r.midpoint_after_x2.0,
            r.hidden_trades
        );
    }
    s
}

/// Writes `<out>/<key>/...` for every instrument-day plus `<out>/summary.csv`.
pub fn cmd_analyze(inputs: &[PathBuf], cfg: &RunConfig) -> Result<(), CliError> {
    let files = expand_inputs(inputs)?;
    let pool = thread_pool(cfg.jobs, files.len())?;
    let days = load_all(&files, cfg, &pool)?;
    let analyses = analyze_all(&days, &cfg.session, &pool)?;
    let opts = AnalysisOptions {
        session: cfg.session,
        exclude_mixed_hidden: cfg.exclude_mixed_hidden,
        exclude_undirected_sizes: cfg.exclude_undirected_sizes,
        return_bin_width: cfg.bins_return_width,
        deviation_mode: cfg.deviation,
    };

    create_dir(&cfg.out)?;
    let mut summary = String::from(
        "key,events,market_orders,undirected_market_orders,adds,order_count,mou,mo,act,sprd,onquote_share_buy,onquote_share_sell,volume_quote_correlation,volume_quote_correlation_movers\n",
    );
    for (day, a) in days.iter().zip(&analyses) {
        let report = a.report(day, &opts);
        let dir = cfg.out.join(&a.key);
        create_dir(&dir)?;
        write_file(&dir.join("report.json"), to_json(&report))?;
        let histograms = [
            ("relative_price.csv", &report.relative_price),
            ("prior_spread.csv", &report.prior_spread),
            ("deviation.csv", &report.deviation),
            ("relative_volume.csv", &report.relative_volume),
            ("impact_return.csv", &report.impact_return),
        ];
        for (name, hist) in histograms {
            if let Some(h) = hist {
                write_file(&dir.join(name), h.to_csv())?;
            }
        }
        if let Some(h) = &report.cluster_sizes {
            write_file(&dir.join("cluster_sizes.csv"), h.to_csv())?;
        }
        write_file(
            &dir.join("impact.csv"),
            impact_csv(&a.impact_samples(cfg.exclude_mixed_hidden)),
        )?;
        let mut mos = Vec::new();
        write_market_orders_jsonl(&a.market_orders, &mut mos).expect("in-memory write");
        write_file(&dir.join("market_orders.jsonl"), mos)?;

        let f = report.frequencies;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            a.key,
            a.stats.events,
            a.counts.market_orders,
            a.counts.undirected_market_orders,
            a.counts.adds,
            report.order_count,
            opt(f.mou),
            opt(f.mo),
            opt(f.act),
            opt(f.sprd),
            opt(report.onquote_share_buy),
            opt(report.onquote_share_sell),
            opt(report.volume_quote_correlation),
            opt(report.volume_quote_correlation_movers)
        );
        info!("{}: {} events, {} market orders", a.key, a.stats.events, a.counts.market_orders);
    }
    write_file(&cfg.out.join("summary.csv"), summary)
}

#[derive(Debug, Serialize)]
struct AssignmentObject<'a> {
    label: &'a str,
    cluster: usize,
    samples: usize,
    silhouette: f64,
}

#[derive(Debug, Serialize)]
struct AssignmentFile<'a> {
    k: usize,
    k_min: usize,
    k_max: usize,
    mean_silhouette: f64,
    objective: f64,
    seed: u64,
    restarts: usize,
    pooled_days: bool,
    objects: Vec<AssignmentObject<'a>>,
}

/// Summary of a clustering run, also written to `assignment.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub labels: Vec<String>,
    pub clusters: Vec<usize>,
    pub k: usize,
}

pub fn cmd_cluster(inputs: &[PathBuf], cfg: &RunConfig) -> Result<ClusterOutcome, CliError> {
    let files = expand_inputs(inputs)?;
    let pool = thread_pool(cfg.jobs, files.len())?;
    let days = load_all(&files, cfg, &pool)?;
    let analyses = analyze_all(&days, &cfg.session, &pool)?;

    let mut objects: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (day, a) in days.iter().zip(&analyses) {
        let label = if cfg.pool_days { day.ticker.clone() } else { a.key.clone() };
        objects.entry(label).or_default().extend(a.relative_prices());
    }
    let labels: Vec<String> = objects.keys().cloned().collect();
    let ecdfs: Vec<Ecdf> = objects
        .iter()
        .map(|(label, samples)| {
            Ecdf::from_samples(samples).map_err(|e| CliError::compute(label.clone(), format!("{e} (no in-spread limit orders)")))
        })
        .collect::<Result<_, _>>()?;
    let n = labels.len();
    if n < 2 {
        return Err(CliError::compute(
            "cluster",
            ClusterError::TooFewObjects(n),
        ));
    }

    let (mut k_min, mut k_max) = (cfg.k_min, cfg.k_max);
    if n == 2 {
        warn!("only 2 objects to cluster; forcing k = 2");
        (k_min, k_max) = (2, 2);
    } else if k_max > n {
        warn!("k-max {k_max} exceeds the {n} objects; using k-max = {n}");
        k_max = n;
        k_min = k_min.min(k_max);
    }

    let matrix = pool
        .install(|| distance_matrix(&labels, &ecdfs, true))
        .map_err(|e| CliError::compute("distance matrix", e))?;
    let selection = pool
        .install(|| select_k(&matrix, k_min, k_max, &cfg.kmeans))
        .map_err(|e| CliError::compute("k-means", e))?;
    let best = &selection.best;
    let silhouettes = orderflow::clustering::silhouettes(&matrix, &best.labels)
        .map_err(|e| CliError::compute("silhouette", e))?;

    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("distance_matrix.csv"), matrix.to_csv())?;
    write_file(
        &cfg.out.join("distance_matrix_ordered.csv"),
        matrix.permuted(&best.cluster_order()).to_csv(),
    )?;
    let mut table = String::from("k,mean_silhouette,objective\n");
    for s in &selection.scores {
        let _ = writeln!(table, "{},{},{}", s.k, s.mean_silhouette, s.objective);
    }
    write_file(&cfg.out.join("silhouette_by_k.csv"), table)?;
    let mut ecdf_csv = String::from("label,value,cumulative\n");
    for (label, e) in labels.iter().zip(&ecdfs) {
        for (v, c) in e.values().iter().zip(e.cumulative()) {
            let _ = writeln!(ecdf_csv, "{label},{v},{c}");
        }
    }
    write_file(&cfg.out.join("ecdfs.csv"), ecdf_csv)?;
    let assignment = AssignmentFile {
        k: best.k,
        k_min,
        k_max,
        mean_silhouette: best.mean_silhouette,
        objective: best.objective,
        seed: best.seed,
        restarts: best.restarts,
        pooled_days: cfg.pool_days,
        objects: labels
            .iter()
            .enumerate()
            .map(|(i, label)| AssignmentObject {
                label,
                cluster: best.labels[i],
                samples: ecdfs[i].samples(),
                silhouette: silhouettes[i],
            })
            .collect(),
    };
    write_file(&cfg.out.join("assignment.json"), to_json(&assignment))?;
    info!("k = {} with mean silhouette {}", best.k, best.mean_silhouette);
    Ok(ClusterOutcome {
        clusters: best.labels.clone(),
        labels,
        k: best.k,
    })
}

/// One `[[regimes]]` entry: an optional preset plus field overrides.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct RegimeSpec {
    pub preset: Option<String>,
    #[serde(flatten)]
    pub overrides: toml::Table,
}

impl RegimeSpec {
    fn preset(name: &str) -> RegimeSpec {
        RegimeSpec {
            preset: Some(name.to_string()),
            overrides: toml::Table::new(),
        }
    }

    pub fn resolve(&self) -> Result<RegimeParams, CliError> {
        let base = match &self.preset {
            Some(p) => RegimeParams::preset(p)?,
            None => RegimeParams::default(),
        };
        if self.overrides.is_empty() {
            return Ok(base);
        }
        let mut table = toml::Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
        for (k, v) in &self.overrides {
            table.insert(k.clone(), v.clone());
        }
        let params: RegimeParams = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("regime parameters: {e}")))?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "one")]
    pub n_per_regime: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub regimes: Vec<RegimeSpec>,
}

fn one() -> usize {
    1
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_regime: 1,
            seed: 0,
            regimes: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<SynthSpec, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Regime parameters, all presets when none are listed.
    pub fn resolve(&self) -> Result<Vec<RegimeParams>, CliError> {
        if self.n_per_regime == 0 {
            return Err(CliError::Config("n_per_regime must be at least 1".into()));
        }
        if self.regimes.is_empty() {
            return PRESETS.iter().map(|p| RegimeSpec::preset(p).resolve()).collect();
        }
        self.regimes.iter().map(RegimeSpec::resolve).collect()
    }
}

#[derive(Serialize)]
struct CohortEntry<'a> {
    key: String,
    regime: &'a str,
    seed: u64,
    events: usize,
    market_orders: usize,
}

/// Writes `<key>.csv` and `<key>.truth.json` per generated day and `cohort.json`.
pub fn cmd_synth(
    regimes: &[RegimeParams],
    n_per_regime: usize,
    seed: u64,
    out: &Path,
    jobs: Option<usize>,
) -> Result<(), CliError> {
    for r in regimes {
        r.validate()?;
    }
    let pool = thread_pool(jobs, regimes.len() * n_per_regime)?;
    let cohort = pool.install(|| generate_cohort(n_per_regime, regimes, seed))?;
    create_dir(out)?;
    let mut entries = Vec::new();
    for (day, truth) in &cohort {
        let mut csv = Vec::new();
        day.write_csv(&mut csv).expect("in-memory write");
        write_file(&out.join(day.file_name()), csv)?;
        write_file(&out.join(format!("{}.truth.json", day.key())), to_json(truth))?;
        entries.push(CohortEntry {
            key: day.key(),
            regime: &truth.regime,
            seed: truth.seed,
            events: day.events.len(),
            market_orders: truth.market_orders.len(),
        });
    }
    write_file(&out.join("cohort.json"), to_json(&entries))?;
    info!("wrote {} instrument-days to {}", cohort.len(), out.display());
    Ok(())
}
