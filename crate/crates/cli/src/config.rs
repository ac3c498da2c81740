//! Run configuration: built-in defaults, then a flat TOML file, then flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use triage_core::curves::DEFAULT_GRID_SIZE;
use triage_core::policies::{PolicyKind, RandomScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Policies run on held-out episodes from the input file.
    Real,
    /// Policies run on episodes simulated from the fitted model.
    Synthetic,
}

/// Capacities, parsed from `a,b,c` or `start:stop:step`.
#[derive(Debug, Clone, PartialEq)]
pub struct KGrid(pub Vec<f64>);

impl FromStr for KGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 {
            let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || stop < start {
                return Err("range needs start <= stop and a positive step".into());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // Round to the step's decimal precision so 0.1 + 2·0.1 prints as 0.3.
            let scale = 1e12;
            let grid = (0..=n)
                .map(|i| ((start + i as f64 * step) * scale).round() / scale)
                .collect();
            return Ok(KGrid(grid));
        }
        s.split(',').map(num).collect::<std::result::Result<_, _>>().map(KGrid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyList(pub Vec<PolicyKind>);

impl FromStr for PolicyList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<PolicyKind>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()
            .map(PolicyList)
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML file with any of the keys below (underscored).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Episode horizon in seconds; inferred from the data when unset.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Capacities: `0.01,0.05,0.1` or `0.01:0.2:0.01`.
    #[arg(long, global = true)]
    pub k_grid: Option<KGrid>,
    /// Comma list of static, static_optimal, dynamic, random, batch.
    #[arg(long, global = true)]
    pub policies: Option<PolicyList>,
    /// Simulated episodes in synthetic mode.
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Monte Carlo replications per bound evaluation.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Time points in the critical-curve grid.
    #[arg(long, global = true)]
    pub grid_size: Option<usize>,
    /// Histogram bins for the rate estimate.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Keep the histogram rate piecewise constant (exact mass).
    #[arg(long, global = true)]
    pub piecewise_constant: bool,
    /// Malformed input rows tolerated before failing.
    #[arg(long, global = true)]
    pub max_malformed: Option<usize>,
    /// `uniform` or `bernoulli`.
    #[arg(long, global = true)]
    pub random_scheme: Option<String>,
    /// Fixed threshold for the `static` policy.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Share of episodes used for fitting in real mode.
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
}

/// Keys accepted in the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    tau: Option<f64>,
    k_grid: Option<Vec<f64>>,
    policies: Option<Vec<String>>,
    episodes: Option<usize>,
    reps: Option<usize>,
    seed: Option<u64>,
    grid_size: Option<usize>,
    bins: Option<usize>,
    mode: Option<Mode>,
    out_dir: Option<PathBuf>,
    piecewise_constant: Option<bool>,
    max_malformed: Option<usize>,
    random_scheme: Option<String>,
    alpha: Option<f64>,
    train_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tau: Option<f64>,
    pub k_grid: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub episodes: usize,
    pub reps: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub bins: usize,
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub piecewise_constant: bool,
    pub max_malformed: usize,
    pub random_scheme: RandomScheme,
    pub alpha: f64,
    pub train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: None,
            k_grid: (1..=20).map(|i| i as f64 / 100.0).collect(),
            policies: vec![
                PolicyKind::StaticOptimal,
                PolicyKind::Dynamic,
                PolicyKind::Random,
                PolicyKind::Batch,
            ],
            episodes: 2000,
            reps: 1000,
            seed: 0,
            grid_size: DEFAULT_GRID_SIZE,
            bins: 24,
            mode: Mode::Synthetic,
            out_dir: PathBuf::from("out"),
            piecewise_constant: false,
            max_malformed: 0,
            random_scheme: RandomScheme::Uniform,
            alpha: 0.5,
            train_fraction: 0.5,
        }
    }
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig> {
        let file = match &args.config {
            Some(path) => read_file_config(path)?,
            None => FileConfig::default(),
        };
        let mut cfg = RunConfig::default();

        cfg.tau = args.tau.or(file.tau);
        if let Some(g) = args.k_grid.clone().map(|g| g.0).or(file.k_grid) {
            cfg.k_grid = g;
        }
        if let Some(p) = &args.policies {
            cfg.policies = p.0.clone();
        } else if let Some(p) = file.policies {
            cfg.policies = p
                .iter()
                .map(|s| s.parse::<PolicyKind>())
                .collect::<Result<_, _>>()?;
        }
        macro_rules! pick {
            ($field:ident) => {
                if let Some(v) = args.$field.clone().or(file.$field) {
                    cfg.$field = v;
                }
            };
        }
        pick!(episodes);
        pick!(reps);
        pick!(seed);
        pick!(grid_size);
        pick!(bins);
        pick!(mode);
        pick!(out_dir);
        pick!(max_malformed);
        pick!(alpha);
        pick!(train_fraction);
        cfg.piecewise_constant = args.piecewise_constant || file.piecewise_constant.unwrap_or(false);
        if let Some(s) = args.random_scheme.clone().or(file.random_scheme) {
            cfg.random_scheme = s.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(tau) = self.tau {
            if !(tau.is_finite() && tau > 0.0) {
                bail!("--tau must be positive");
            }
        }
        if self.k_grid.is_empty() {
            bail!("--k-grid is empty");
        }
        if self.k_grid.iter().any(|k| !(0.0..=1.0).contains(k)) {
            bail!("--k-grid values must lie in [0, 1]");
        }
        if self.k_grid.windows(2).any(|w| w[1] <= w[0]) {
            bail!("--k-grid must be strictly increasing");
        }
        if self.policies.is_empty() {
            bail!("--policies is empty");
        }
        if self.reps == 0 {
            bail!("--reps must be at least 1");
        }
        if self.grid_size < 2 {
            bail!("--grid-size must be at least 2");
        }
        if self.bins == 0 {
            bail!("--bins must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("--alpha must lie in [0, 1]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("--train-fraction must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn k_max(&self) -> f64 {
        *self.k_grid.last().expect("validated non-empty")
    }
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
