//! Fitting, curve caching and the parallel evaluation grid shared by the
//! subcommands.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use triage_core::bounds::{
    bound_batch_mc, bound_dynamic_mc, bound_random, bound_static, bound_static_optimal,
    optimal_static_threshold, upper_bound, BoundCurve, BoundMethod,
};
use triage_core::curves::{fingerprint, solve_curves, CriticalCurveSet, CurveMeta};
use triage_core::nhpp::{estimate_rate, ArrivalSequence, RateEstimate, RateFunction};
use triage_core::policies::{
    capacity_for, detection_rate, run_batch, run_dynamic, run_random, run_static, synth_episode,
    Episode, InspectionOutcome, PolicyKind, RandomScheme, TradeoffCurve,
};
use triage_core::rng::{seeded, Stream};
use triage_core::scoredist::{fit_ecdf, ScoreCdf, ScoreModel};

use crate::data::{read_json, write_json, OutcomeRow};

#[derive(Debug, Clone)]
pub struct Fitted {
    pub rate: RateFunction,
    pub model: ScoreModel,
    pub episodes: usize,
    pub records: usize,
    pub frauds: usize,
}

/// Histogram rate plus class-conditional ECDFs; `β` is the fraud share of
/// all records.
pub fn fit(episodes: &[Episode], bins: usize, piecewise_constant: bool) -> Result<Fitted> {
    if episodes.is_empty() {
        bail!("no episodes to fit");
    }
    let arrivals = episodes
        .iter()
        .map(|e| ArrivalSequence::new(e.records().iter().map(|r| r.t).collect(), e.horizon()))
        .collect::<Result<Vec<_>, _>>()?;
    let mode = if piecewise_constant {
        RateEstimate::PiecewiseConstant
    } else {
        RateEstimate::Interpolated
    };
    let rate = estimate_rate(&arrivals, bins, mode)?;
    let (mut s0, mut s1) = (Vec::new(), Vec::new());
    for r in episodes.iter().flat_map(|e| e.records()) {
        if r.label {
            s1.push(r.score);
        } else {
            s0.push(r.score);
        }
    }
    if s1.is_empty() {
        bail!("no fraud records: the fraud score distribution cannot be fitted");
    }
    if s0.is_empty() {
        bail!("no non-fraud records: the non-fraud score distribution cannot be fitted");
    }
    let records = s0.len() + s1.len();
    let beta = s1.len() as f64 / records as f64;
    let model = ScoreModel::new(beta, fit_ecdf(&s0)?, fit_ecdf(&s1)?)?;
    Ok(Fitted {
        rate,
        model,
        episodes: episodes.len(),
        records,
        frauds: s1.len(),
    })
}

/// Solves for budget `n`, reusing any cached solve with the same rate, score
/// distribution and grid and at least `n` curves.
pub fn solve_cached(
    rate: &RateFunction,
    fs: &ScoreCdf,
    n: usize,
    grid_size: usize,
    cache_dir: Option<&Path>,
) -> Result<CriticalCurveSet> {
    let Some(dir) = cache_dir else {
        return Ok(solve_curves(rate, fs, n, grid_size)?);
    };
    let stem = format!("curves-{}-{}-g{grid_size}", fingerprint(rate), fingerprint(fs));
    let meta_path = dir.join(format!("{stem}.json"));
    let csv_path = dir.join(format!("{stem}.csv"));
    if meta_path.exists() && csv_path.exists() {
        let meta: CurveMeta = read_json(&meta_path)?;
        if meta.n >= n {
            let text = std::fs::read_to_string(&csv_path)?;
            let set = CriticalCurveSet::from_csv(&text, &meta)?;
            return Ok(set.truncated(n)?);
        }
    }
    let set = solve_curves(rate, fs, n, grid_size)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_curves(&set, &csv_path, &meta_path)?;
    Ok(set)
}

pub fn save_curves(set: &CriticalCurveSet, csv_path: &Path, meta_path: &Path) -> Result<()> {
    std::fs::write(csv_path, set.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    write_json(meta_path, &set.meta())
}

pub fn load_curves(meta_path: &Path) -> Result<CriticalCurveSet> {
    let meta: CurveMeta = read_json(meta_path)?;
    let csv_path = meta_path.with_extension("csv");
    let text = std::fs::read_to_string(&csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))?;
    Ok(CriticalCurveSet::from_csv(&text, &meta)?)
}

/// Simulated days with ids `0..count`; day `i` uses its own seeded stream.
pub fn synth_episodes(
    rate: &RateFunction,
    model: &ScoreModel,
    count: usize,
    seed: u64,
) -> Vec<(String, Episode)> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(seed, i as u64, Stream::Episodes);
            (i.to_string(), synth_episode(rate, model, &mut rng))
        })
        .collect()
}

/// Everything a policy needs besides the episode.
pub struct PolicyContext<'a> {
    pub model: &'a ScoreModel,
    pub lambda_total: f64,
    pub curves: Option<&'a CriticalCurveSet>,
    pub alpha: f64,
    pub scheme: RandomScheme,
    pub seed: u64,
}

impl PolicyContext<'_> {
    pub fn run(
        &self,
        policy: PolicyKind,
        k_index: usize,
        k: f64,
        ep_index: usize,
        ep: &Episode,
    ) -> Result<InspectionOutcome> {
        let n_k = capacity_for(k, self.lambda_total);
        let mut out = match policy {
            PolicyKind::Static => run_static(ep, self.alpha, n_k),
            PolicyKind::StaticOptimal => {
                run_static(ep, optimal_static_threshold(self.model, k)?, n_k)
            }
            PolicyKind::Dynamic => {
                let curves = self
                    .curves
                    .ok_or_else(|| anyhow!("dynamic policy needs critical curves"))?;
                run_dynamic(ep, curves, n_k)?
            }
            PolicyKind::Random => {
                let index = ((k_index as u64) << 32) | ep_index as u64;
                let mut rng = seeded(self.seed, index, Stream::RandomPolicy);
                run_random(ep, k, n_k, self.scheme, &mut rng)
            }
            PolicyKind::Batch => run_batch(ep, n_k),
        };
        out.policy = policy;
        Ok(out)
    }
}

/// Runs every (policy, k) cell over all episodes. Cells run in parallel and
/// are gathered in cell order.
pub fn evaluate_policies(
    episodes: &[(String, Episode)],
    ctx: &PolicyContext,
    policies: &[PolicyKind],
    k_grid: &[f64],
) -> Result<(Vec<TradeoffCurve>, Vec<OutcomeRow>)> {
    let cells: Vec<(PolicyKind, usize)> = policies
        .iter()
        .flat_map(|&p| (0..k_grid.len()).map(move |ki| (p, ki)))
        .collect();
    let results: Vec<Result<(Vec<InspectionOutcome>, Vec<OutcomeRow>)>> = cells
        .par_iter()
        .map(|&(policy, ki)| {
            let k = k_grid[ki];
            let mut outs = Vec::with_capacity(episodes.len());
            let mut rows = Vec::with_capacity(episodes.len());
            for (i, (id, ep)) in episodes.iter().enumerate() {
                let mut o = ctx.run(policy, ki, k, i, ep)?;
                rows.push(OutcomeRow {
                    policy: policy.name(),
                    k,
                    episode_id: id.clone(),
                    n_k: o.capacity,
                    selected: o.selected.len(),
                    frauds_caught: o.frauds_caught,
                    frauds_total: o.frauds_total,
                });
                o.selected = Vec::new();
                outs.push(o);
            }
            Ok((outs, rows))
        })
        .collect();

    let mut curves: Vec<TradeoffCurve> = policies
        .iter()
        .map(|&policy| TradeoffCurve {
            policy,
            k_grid: k_grid.to_vec(),
            psi_mean: Vec::new(),
            psi_se: Vec::new(),
            episodes_used: Vec::new(),
        })
        .collect();
    let mut all_rows = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        let (outs, rows) = result?;
        let (mean, se) = detection_rate(&outs)?;
        let used = outs.iter().filter(|o| o.frauds_total > 0).count();
        let c = curves
            .iter_mut()
            .find(|c| c.policy == cell.0)
            .expect("policy listed");
        c.psi_mean.push(mean);
        c.psi_se.push(se);
        c.episodes_used.push(used);
        all_rows.extend(rows);
    }
    Ok((curves, all_rows))
}

pub fn bound_method_for(policy: PolicyKind) -> BoundMethod {
    match policy {
        PolicyKind::Static => BoundMethod::Static,
        PolicyKind::StaticOptimal => BoundMethod::StaticOptimal,
        PolicyKind::Dynamic => BoundMethod::Dynamic,
        PolicyKind::Random => BoundMethod::Random,
        PolicyKind::Batch => BoundMethod::Batch,
    }
}

pub struct BoundContext<'a> {
    pub model: &'a ScoreModel,
    pub rate: &'a RateFunction,
    pub curves: Option<&'a CriticalCurveSet>,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
}

impl BoundContext<'_> {
    /// Value and Monte Carlo standard error of one method at one capacity.
    pub fn eval(&self, method: BoundMethod, k_index: usize, k: f64) -> Result<(f64, f64)> {
        let lambda_total = self.rate.total();
        Ok(match method {
            BoundMethod::Static => (bound_static(self.model, lambda_total, k, self.alpha)?, 0.0),
            BoundMethod::StaticOptimal => (bound_static_optimal(self.model, k)?, 0.0),
            BoundMethod::Random => (bound_random(lambda_total, k)?, 0.0),
            BoundMethod::Upper => (upper_bound(self.model.beta(), k)?, 0.0),
            BoundMethod::Dynamic => {
                let curves = self
                    .curves
                    .ok_or_else(|| anyhow!("dynamic bound needs critical curves"))?;
                let mut rng = seeded(self.seed, k_index as u64, Stream::DynamicBound);
                bound_dynamic_mc(self.model, self.rate, curves, k, self.reps, &mut rng)?
            }
            BoundMethod::Batch => {
                let mut rng = seeded(self.seed, k_index as u64, Stream::BatchBound);
                bound_batch_mc(self.model, lambda_total, k, self.reps, &mut rng)?
            }
        })
    }
}

pub fn evaluate_bounds(
    ctx: &BoundContext,
    methods: &[BoundMethod],
    k_grid: &[f64],
) -> Result<Vec<BoundCurve>> {
    let cells: Vec<(BoundMethod, usize)> = methods
        .iter()
        .flat_map(|&m| (0..k_grid.len()).map(move |ki| (m, ki)))
        .collect();
    let values: Vec<Result<(f64, f64)>> = cells
        .par_iter()
        .map(|&(m, ki)| ctx.eval(m, ki, k_grid[ki]))
        .collect();
    let mut curves: Vec<BoundCurve> = methods
        .iter()
        .map(|&method| {
            let mc = matches!(method, BoundMethod::Dynamic | BoundMethod::Batch);
            BoundCurve {
                method,
                k_grid: k_grid.to_vec(),
                values: Vec::new(),
                mc_se: Vec::new(),
                beta: ctx.model.beta(),
                lambda_total: ctx.rate.total(),
                reps: if mc { ctx.reps } else { 0 },
                seed: ctx.seed,
            }
        })
        .collect();
    for (&(method, _), v) in cells.iter().zip(values) {
        let (value, se) = v?;
        let c = curves.iter_mut().find(|c| c.method == method).expect("listed");
        c.values.push(value);
        c.mc_se.push(se);
    }
    Ok(curves)
}
