//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use orderflow::analysis::DeviationMode;
use orderflow::clustering::KMeansParams;
use orderflow::model::parse_clock;
use orderflow::SessionConfig;
use serde::Deserialize;

use crate::CliError;

/// Keys accepted in `--config` files. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub session_start: Option<String>,
    pub session_end: Option<String>,
    pub mo_window_ms: Option<u64>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub bins_return_width: Option<f64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub pool_days: Option<bool>,
    pub exclude_mixed_hidden: Option<bool>,
    pub exclude_undirected_sizes: Option<bool>,
    pub deviation: Option<DeviationMode>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeviationArg {
    Ticks,
    Relative,
}

impl From<DeviationArg> for DeviationMode {
    fn from(d: DeviationArg) -> Self {
        match d {
            DeviationArg::Ticks => DeviationMode::Ticks,
            DeviationArg::Relative => DeviationMode::Relative,
        }
    }
}

/// Flags shared by every command that reads message files.
#[derive(Debug, Clone, Default, Args)]
pub struct SessionArgs {
    /// Session start, HH:MM[:SS[.mmm]] (default 10:00)
    #[arg(long)]
    pub session_start: Option<String>,
    /// Session end, exclusive (default 15:30)
    #[arg(long)]
    pub session_end: Option<String>,
    /// Maximum span of one reconstructed market order in ms (default 1)
    #[arg(long)]
    pub mo_window_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalysisArgs {
    /// Bin width for the impact-return histogram (default tick / median midpoint)
    #[arg(long)]
    pub bins_return_width: Option<f64>,
    /// Leave market orders that mix hidden and visible trades out of impact statistics
    #[arg(long)]
    pub exclude_mixed_hidden: bool,
    /// Leave all-hidden market orders out of the cluster-size histogram
    #[arg(long)]
    pub exclude_undirected_sizes: bool,
    /// Unit for off-spread deviations
    #[arg(long, value_enum)]
    pub deviation: Option<DeviationArg>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClusterArgs {
    /// Smallest cluster count tried (default 2)
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Largest cluster count tried (default 8)
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Seed for k-means initialisation (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// k-means restarts per cluster count (default 32)
    #[arg(long)]
    pub restarts: Option<usize>,
    /// One object per ticker with samples pooled over its days (default)
    #[arg(long, conflicts_with = "per_day")]
    pub pool_days: bool,
    /// One object per instrument-day
    #[arg(long)]
    pub per_day: bool,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub session: SessionConfig,
    pub k_min: usize,
    pub k_max: usize,
    pub kmeans: KMeansParams,
    pub bins_return_width: Option<f64>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub pool_days: bool,
    pub exclude_mixed_hidden: bool,
    pub exclude_undirected_sizes: bool,
    pub deviation: DeviationMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            session: SessionConfig::default(),
            k_min: 2,
            k_max: 8,
            kmeans: KMeansParams::default(),
            bins_return_width: None,
            out: PathBuf::from("out"),
            jobs: None,
            pool_days: true,
            exclude_mixed_hidden: false,
            exclude_undirected_sizes: false,
            deviation: DeviationMode::Ticks,
        }
    }
}

fn clock(text: &str) -> Result<u64, CliError> {
    parse_clock(text).map_err(|e| CliError::Config(e.to_string()))
}

pub struct Overrides<'a> {
    pub session: Option<&'a SessionArgs>,
    pub analysis: Option<&'a AnalysisArgs>,
    pub cluster: Option<&'a ClusterArgs>,
    pub out: Option<&'a Path>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn resolve(file: Option<&FileConfig>, flags: Overrides<'_>) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        if let Some(s) = flags.session {
            if let Some(t) = &s.session_start {
                cfg.session.session_start_ms = clock(t)?;
            }
            if let Some(t) = &s.session_end {
                cfg.session.session_end_ms = clock(t)?;
            }
            if let Some(w) = s.mo_window_ms {
                cfg.session.mo_window_ms = w;
            }
        }
        if let Some(a) = flags.analysis {
            if a.bins_return_width.is_some() {
                cfg.bins_return_width = a.bins_return_width;
            }
            cfg.exclude_mixed_hidden |= a.exclude_mixed_hidden;
            cfg.exclude_undirected_sizes |= a.exclude_undirected_sizes;
            if let Some(d) = a.deviation {
                cfg.deviation = d.into();
            }
        }
        if let Some(c) = flags.cluster {
            if let Some(k) = c.k_min {
                cfg.k_min = k;
            }
            if let Some(k) = c.k_max {
                cfg.k_max = k;
            }
            if let Some(s) = c.seed {
                cfg.kmeans.seed = s;
            }
            if let Some(r) = c.restarts {
                cfg.kmeans.restarts = r;
            }
            if c.per_day {
                cfg.pool_days = false;
            } else if c.pool_days {
                cfg.pool_days = true;
            }
        }
        if let Some(out) = flags.out {
            cfg.out = out.to_path_buf();
        }
        if flags.jobs.is_some() {
            cfg.jobs = flags.jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, f: &FileConfig) -> Result<(), CliError> {
        if let Some(t) = &f.session_start {
            self.session.session_start_ms = clock(t)?;
        }
        if let Some(t) = &f.session_end {
            self.session.session_end_ms = clock(t)?;
        }
        if let Some(w) = f.mo_window_ms {
            self.session.mo_window_ms = w;
        }
        self.k_min = f.k_min.unwrap_or(self.k_min);
        self.k_max = f.k_max.unwrap_or(self.k_max);
        self.kmeans.seed = f.seed.unwrap_or(self.kmeans.seed);
        self.kmeans.restarts = f.restarts.unwrap_or(self.kmeans.restarts);
        if f.bins_return_width.is_some() {
            self.bins_return_width = f.bins_return_width;
        }
        if let Some(out) = &f.out {
            self.out = out.clone();
        }
        if f.jobs.is_some() {
            self.jobs = f.jobs;
        }
        self.pool_days = f.pool_days.unwrap_or(self.pool_days);
        self.exclude_mixed_hidden = f.exclude_mixed_hidden.unwrap_or(self.exclude_mixed_hidden);
        self.exclude_undirected_sizes = f.exclude_undirected_sizes.unwrap_or(self.exclude_undirected_sizes);
        self.deviation = f.deviation.unwrap_or(self.deviation);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.session
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(CliError::Config(format!(
                "need 2 <= k-min <= k-max, got {}..{}",
                self.k_min, self.k_max
            )));
        }
        if self.kmeans.restarts == 0 {
            return Err(CliError::Config("restarts must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if let Some(w) = self.bins_return_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(CliError::Config(format!("bins-return-width must be positive, got {w}")));
            }
        }
        Ok(())
    }
}
