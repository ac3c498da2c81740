//! Subcommand implementations. Each writes its files under the configured
//! output directory and returns a small report for the caller to print.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use triage_core::bounds::{upper_bound, BoundCurve, BoundMethod};
use triage_core::curves::CriticalCurveSet;
use triage_core::nhpp::RateFunction;
use triage_core::policies::{capacity_for, Episode, PolicyKind, TradeoffCurve};
use triage_core::scoredist::ScoreModel;

use crate::config::{Mode, RunConfig};
use crate::data::{
    read_episodes, read_json, write_bounds, write_episodes, write_json, write_outcomes,
    write_sweep, write_tradeoffs, SweepRow,
};
use crate::engine::{
    bound_method_for, evaluate_bounds, evaluate_policies, fit, load_curves, save_curves,
    solve_cached, synth_episodes, BoundContext, Fitted, PolicyContext,
};

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(&cfg.out_dir)
}

fn cache_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("cache")
}

pub fn load_model(rate: &Path, model: &Path) -> Result<(RateFunction, ScoreModel)> {
    Ok((read_json(rate)?, read_json(model)?))
}

#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub beta: f64,
    pub lambda_total: f64,
    pub episodes: usize,
    pub malformed: usize,
    pub clamped: usize,
}

/// Fits the rate and score model from an episodes file.
pub fn estimate(cfg: &RunConfig, input: &Path) -> Result<EstimateReport> {
    let ing = read_episodes(input, cfg.tau, cfg.max_malformed)?;
    let eps: Vec<Episode> = ing.episodes.into_iter().map(|(_, e)| e).collect();
    let f = fit(&eps, cfg.bins, cfg.piecewise_constant)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join("rate.json"), &f.rate)?;
    write_json(&dir.join("model.json"), &f.model)?;
    Ok(EstimateReport {
        beta: f.model.beta(),
        lambda_total: f.rate.total(),
        episodes: f.episodes,
        malformed: ing.malformed,
        clamped: ing.clamped,
    })
}

fn max_budget(cfg: &RunConfig, rate: &RateFunction) -> usize {
    capacity_for(cfg.k_max(), rate.total())
}

/// Solves and saves curves for the largest budget in the grid (or `n`).
pub fn curves(
    cfg: &RunConfig,
    rate_path: &Path,
    model_path: &Path,
    n: Option<usize>,
) -> Result<CriticalCurveSet> {
    let (rate, model) = load_model(rate_path, model_path)?;
    let n = n.unwrap_or_else(|| max_budget(cfg, &rate));
    if n == 0 {
        bail!("inspection budget must be at least 1");
    }
    let dir = out_dir(cfg)?;
    let set = solve_cached(&rate, model.fs(), n, cfg.grid_size, Some(&cache_dir(cfg)))?;
    if let Err(e) = set.check_invariants() {
        bail!("solved curves violate an invariant: {e}");
    }
    save_curves(&set, &dir.join("curves.csv"), &dir.join("curves.json"))?;
    Ok(set)
}

fn curves_if_needed(
    cfg: &RunConfig,
    rate: &RateFunction,
    model: &ScoreModel,
    given: Option<&Path>,
) -> Result<Option<CriticalCurveSet>> {
    if !cfg.policies.contains(&PolicyKind::Dynamic) {
        return Ok(None);
    }
    let n = max_budget(cfg, rate).max(1);
    let set = match given {
        Some(p) => {
            let set = load_curves(p)?;
            if set.budget() < n {
                bail!("{} holds {} curves, {n} needed", p.display(), set.budget());
            }
            set
        }
        None => solve_cached(rate, model.fs(), n, cfg.grid_size, Some(&cache_dir(cfg)))?,
    };
    Ok(Some(set))
}

fn bound_methods(cfg: &RunConfig, model: &ScoreModel) -> Vec<BoundMethod> {
    let mut methods: Vec<BoundMethod> = cfg.policies.iter().map(|&p| bound_method_for(p)).collect();
    if model.beta() <= 0.0 {
        methods.retain(|&m| m != BoundMethod::Batch);
    } else {
        methods.push(BoundMethod::Upper);
    }
    methods
}

fn compute_bounds(
    cfg: &RunConfig,
    rate: &RateFunction,
    model: &ScoreModel,
    curves: Option<&CriticalCurveSet>,
) -> Result<Vec<BoundCurve>> {
    let ctx = BoundContext {
        model,
        rate,
        curves,
        alpha: cfg.alpha,
        reps: cfg.reps,
        seed: cfg.seed,
    };
    evaluate_bounds(&ctx, &bound_methods(cfg, model), &cfg.k_grid)
}

/// Evaluates the analytic bounds for every requested policy.
pub fn bounds(cfg: &RunConfig, rate_path: &Path, model_path: &Path) -> Result<Vec<BoundCurve>> {
    let (rate, model) = load_model(rate_path, model_path)?;
    let curves = curves_if_needed(cfg, &rate, &model, None)?;
    let out = compute_bounds(cfg, &rate, &model, curves.as_ref())?;
    write_bounds(&out_dir(cfg)?.join("bounds.csv"), &out)?;
    Ok(out)
}

fn run_policies(
    cfg: &RunConfig,
    rate: &RateFunction,
    model: &ScoreModel,
    curves: Option<&CriticalCurveSet>,
    episodes: &[(String, Episode)],
) -> Result<(Vec<TradeoffCurve>, Vec<crate::data::OutcomeRow>)> {
    let ctx = PolicyContext {
        model,
        lambda_total: rate.total(),
        curves,
        alpha: cfg.alpha,
        scheme: cfg.random_scheme,
        seed: cfg.seed,
    };
    evaluate_policies(episodes, &ctx, &cfg.policies, &cfg.k_grid)
}

/// Runs the policies on real held-out episodes or on simulated ones.
pub fn simulate(
    cfg: &RunConfig,
    rate_path: &Path,
    model_path: &Path,
    curves_path: Option<&Path>,
    input: Option<&Path>,
) -> Result<Vec<TradeoffCurve>> {
    let (rate, model) = load_model(rate_path, model_path)?;
    let curves = curves_if_needed(cfg, &rate, &model, curves_path)?;
    let episodes = match (cfg.mode, input) {
        (Mode::Real, Some(p)) => {
            read_episodes(p, Some(rate.horizon()), cfg.max_malformed)?.episodes
        }
        (Mode::Real, None) => bail!("real mode needs --input with held-out episodes"),
        (Mode::Synthetic, _) => synth_episodes(&rate, &model, cfg.episodes, cfg.seed),
    };
    let (tradeoffs, rows) = run_policies(cfg, &rate, &model, curves.as_ref(), &episodes)?;
    let dir = out_dir(cfg)?;
    write_tradeoffs(&dir.join("tradeoff.csv"), &tradeoffs)?;
    write_outcomes(&dir.join("outcomes.csv"), &rows)?;
    Ok(tradeoffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Constant,
    Sinusoidal,
    Piecewise,
}

/// Writes simulated episodes in the ingestion schema.
pub fn synth(
    cfg: &RunConfig,
    model_path: &Path,
    shape: Shape,
    expected: Option<f64>,
    amplitude: f64,
    rate_path: Option<&Path>,
) -> Result<PathBuf> {
    let model: ScoreModel = read_json(model_path)?;
    let rate = match shape {
        Shape::Piecewise => {
            let p = rate_path.context("--shape piecewise needs --rate")?;
            read_json::<RateFunction>(p)?
        }
        Shape::Constant | Shape::Sinusoidal => {
            let tau = cfg.tau.context("--tau is required for a parametric rate")?;
            let expected = expected.context("--expected is required for a parametric rate")?;
            if !(expected > 0.0) {
                bail!("--expected must be positive");
            }
            if shape == Shape::Constant {
                RateFunction::constant(expected / tau, tau)?
            } else {
                sinusoid(tau, expected, amplitude)?
            }
        }
    };
    let episodes = synth_episodes(&rate, &model, cfg.episodes, cfg.seed);
    let path = out_dir(cfg)?.join("episodes.csv");
    write_episodes(&path, &episodes)?;
    Ok(path)
}

/// One period of `1 + a·sin(2πt/τ)` on 96 linear pieces, scaled to the
/// requested expected count.
pub fn sinusoid(tau: f64, expected: f64, amplitude: f64) -> Result<RateFunction> {
    if !(0.0..=1.0).contains(&amplitude) {
        bail!("--amplitude must lie in [0, 1]");
    }
    let times: Vec<f64> = (0..=96).map(|i| tau * i as f64 / 96.0).collect();
    let rates = times
        .iter()
        .map(|&t| 1.0 + amplitude * (2.0 * std::f64::consts::PI * t / tau).sin())
        .collect();
    let raw = RateFunction::new(times, rates)?;
    let total = raw.total();
    Ok(raw.scaled(expected / total)?)
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub fitted: Option<Fitted>,
    pub tradeoffs: Vec<TradeoffCurve>,
    pub bounds: Vec<BoundCurve>,
    pub checks: Vec<Check>,
    pub summary: String,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Fit (optional), solve, bound, simulate, then cross-check everything.
pub fn sweep(
    cfg: &RunConfig,
    input: Option<&Path>,
    rate_path: Option<&Path>,
    model_path: Option<&Path>,
) -> Result<SweepReport> {
    let dir = out_dir(cfg)?.to_path_buf();
    let (rate, model, fitted, held_out) = match (rate_path, model_path, input) {
        (Some(r), Some(m), _) => {
            let (rate, model) = load_model(r, m)?;
            let held = match (cfg.mode, input) {
                (Mode::Real, Some(p)) => {
                    Some(read_episodes(p, Some(rate.horizon()), cfg.max_malformed)?.episodes)
                }
                (Mode::Real, None) => bail!("real mode needs --input with episodes"),
                _ => None,
            };
            (rate, model, None, held)
        }
        (None, None, Some(p)) => {
            let ing = read_episodes(p, cfg.tau, cfg.max_malformed)?;
            let (train, test) = match cfg.mode {
                Mode::Real => {
                    let n = ing.episodes.len();
                    let cut = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n);
                    if cut == n {
                        bail!("real mode needs at least two episodes to hold one out");
                    }
                    let mut all = ing.episodes;
                    let test = all.split_off(cut);
                    (all, Some(test))
                }
                Mode::Synthetic => (ing.episodes, None),
            };
            let eps: Vec<Episode> = train.into_iter().map(|(_, e)| e).collect();
            let f = fit(&eps, cfg.bins, cfg.piecewise_constant)?;
            write_json(&dir.join("rate.json"), &f.rate)?;
            write_json(&dir.join("model.json"), &f.model)?;
            (f.rate.clone(), f.model.clone(), Some(f), test)
        }
        _ => bail!("sweep needs either --input or both --rate and --model"),
    };

    let curves = curves_if_needed(cfg, &rate, &model, None)?;
    if let Some(c) = &curves {
        save_curves(c, &dir.join("curves.csv"), &dir.join("curves.json"))?;
    }
    let bounds = compute_bounds(cfg, &rate, &model, curves.as_ref())?;
    let episodes = match held_out {
        Some(h) => h,
        None => synth_episodes(&rate, &model, cfg.episodes, cfg.seed),
    };
    let (tradeoffs, _) = run_policies(cfg, &rate, &model, curves.as_ref(), &episodes)?;

    let mut rows = Vec::new();
    for t in &tradeoffs {
        for i in 0..t.k_grid.len() {
            rows.push(SweepRow {
                source: "empirical",
                method: t.policy.name(),
                k: t.k_grid[i],
                value: t.psi_mean[i],
                se: t.psi_se[i],
            });
        }
    }
    for b in &bounds {
        let source = if b.method == BoundMethod::Upper {
            "upper"
        } else {
            "analytic"
        };
        for i in 0..b.k_grid.len() {
            rows.push(SweepRow {
                source,
                method: b.method.name(),
                k: b.k_grid[i],
                value: b.values[i],
                se: b.mc_se[i],
            });
        }
    }
    write_bounds(&dir.join("bounds.csv"), &bounds)?;
    write_tradeoffs(&dir.join("tradeoff.csv"), &tradeoffs)?;
    write_sweep(&dir.join("sweep.csv"), &rows)?;

    let checks = self_checks(cfg, &model, curves.as_ref(), &rows, &tradeoffs);
    let summary = summary_table(cfg, &rate, &model, &tradeoffs, &checks);
    std::fs::write(dir.join("summary.txt"), &summary)?;
    Ok(SweepReport {
        fitted,
        tradeoffs,
        bounds,
        checks,
        summary,
    })
}

fn self_checks(
    cfg: &RunConfig,
    model: &ScoreModel,
    curves: Option<&CriticalCurveSet>,
    rows: &[SweepRow],
    tradeoffs: &[TradeoffCurve],
) -> Vec<Check> {
    let mut checks = Vec::new();
    if let Some(c) = curves {
        let r = c.check_invariants();
        checks.push(Check {
            name: "curve invariants".into(),
            passed: r.is_ok(),
            detail: r.err().unwrap_or_default(),
        });
    }
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| !(0.0..=1.0).contains(&r.value))
        .map(|r| format!("{} {} k={}: {}", r.source, r.method, r.k, r.value))
        .collect();
    checks.push(Check {
        name: "values in [0,1]".into(),
        passed: bad.is_empty(),
        detail: bad.join("; "),
    });
    if model.beta() > 0.0 {
        let over: Vec<String> = rows
            .iter()
            .filter(|r| r.source != "upper")
            .filter(|r| {
                let cap = upper_bound(model.beta(), r.k).unwrap_or(1.0);
                r.value > cap + 2.0 * r.se + 1e-12
            })
            .map(|r| format!("{} {} k={}: {}", r.source, r.method, r.k, r.value))
            .collect();
        checks.push(Check {
            name: "upper-bound cap".into(),
            passed: over.is_empty(),
            detail: over.join("; "),
        });
    }
    if cfg.mode == Mode::Synthetic {
        let v = dominance_violations(tradeoffs);
        checks.push(Check {
            name: "dominance ordering".into(),
            passed: v.is_empty(),
            detail: v.join("; "),
        });
    }
    checks
}

/// Pairs of adjacent policies in `batch ≥ dynamic ≥ static_optimal ≥
/// random` that break the order by more than two combined standard errors.
pub fn dominance_violations(tradeoffs: &[TradeoffCurve]) -> Vec<String> {
    let order = [
        PolicyKind::Batch,
        PolicyKind::Dynamic,
        PolicyKind::StaticOptimal,
        PolicyKind::Random,
    ];
    let present: Vec<&TradeoffCurve> = order
        .iter()
        .filter_map(|p| tradeoffs.iter().find(|t| t.policy == *p))
        .collect();
    let mut out = Vec::new();
    for pair in present.windows(2) {
        let (hi, lo) = (pair[0], pair[1]);
        for i in 0..hi.k_grid.len() {
            let slack = 2.0 * (hi.psi_se[i].powi(2) + lo.psi_se[i].powi(2)).sqrt();
            if lo.psi_mean[i] > hi.psi_mean[i] + slack {
                out.push(format!(
                    "k={}: {} {:.4} > {} {:.4}",
                    hi.k_grid[i], lo.policy, lo.psi_mean[i], hi.policy, hi.psi_mean[i]
                ));
            }
        }
    }
    out
}

fn summary_table(
    cfg: &RunConfig,
    rate: &RateFunction,
    model: &ScoreModel,
    tradeoffs: &[TradeoffCurve],
    checks: &[Check],
) -> String {
    let mut s = String::new();
    let lam = rate.total();
    let _ = writeln!(
        s,
        "beta={:.5} expected_arrivals={:.2} tau={} mode={:?}",
        model.beta(),
        lam,
        rate.horizon(),
        cfg.mode
    );
    let find = |p: PolicyKind| tradeoffs.iter().find(|t| t.policy == p);
    let _ = write!(s, "{:>7} {:>6}", "k", "n_k");
    for t in tradeoffs {
        let _ = write!(s, " {:>15}", t.policy.name());
    }
    let _ = writeln!(s, " {:>8} {:>8} {:>8}", "upper", "BP-DT", "BP-ST");
    let (mut max_dt, mut max_st) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, &k) in cfg.k_grid.iter().enumerate() {
        let _ = write!(s, "{k:>7.4} {:>6}", capacity_for(k, lam));
        for t in tradeoffs {
            let _ = write!(s, " {:>15.4}", t.psi_mean[i]);
        }
        let upper = if model.beta() > 0.0 {
            format!("{:.4}", upper_bound(model.beta(), k).unwrap_or(f64::NAN))
        } else {
            "-".into()
        };
        let gap = |p: PolicyKind| match (find(PolicyKind::Batch), find(p)) {
            (Some(b), Some(o)) => Some(b.psi_mean[i] - o.psi_mean[i]),
            _ => None,
        };
        let fmt = |g: Option<f64>| g.map_or("-".to_string(), |v| format!("{v:.4}"));
        let (dt, st) = (gap(PolicyKind::Dynamic), gap(PolicyKind::StaticOptimal));
        max_dt = max_dt.max(dt.unwrap_or(f64::NEG_INFINITY));
        max_st = max_st.max(st.unwrap_or(f64::NEG_INFINITY));
        let _ = writeln!(s, " {upper:>8} {:>8} {:>8}", fmt(dt), fmt(st));
    }
    if max_dt.is_finite() {
        let _ = writeln!(s, "largest BP-DT gap: {max_dt:.4}");
    }
    if max_st.is_finite() {
        let _ = writeln!(s, "largest BP-ST gap: {max_st:.4}");
    }
    for c in checks {
        let _ = writeln!(
            s,
            "check {:<20} {}{}",
            c.name,
            if c.passed { "ok" } else { "FAILED " },
            c.detail
        );
    }
    s
}
