//! Analytical detection-rate bounds: closed forms for static, random and
//! the end-to-end cap, Monte Carlo for dynamic thresholds and batch
//! selection.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::curves::CriticalCurveSet;
use crate::error::{invalid, Error, Result};
use crate::nhpp::RateFunction;
use crate::policies::{capacity_for, mean_se};
use crate::scoredist::{q_ratio, ScoreCdf, ScoreModel};

/// Uniform points in the batch-bound integration grid (knots are added).
pub const BATCH_GRID_POINTS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    Static,
    StaticOptimal,
    Dynamic,
    Random,
    Batch,
    Upper,
}

impl BoundMethod {
    pub const ALL: [BoundMethod; 6] = [
        BoundMethod::Static,
        BoundMethod::StaticOptimal,
        BoundMethod::Dynamic,
        BoundMethod::Random,
        BoundMethod::Batch,
        BoundMethod::Upper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundMethod::Static => "static",
            BoundMethod::StaticOptimal => "static_optimal",
            BoundMethod::Dynamic => "dynamic",
            BoundMethod::Random => "random",
            BoundMethod::Batch => "batch",
            BoundMethod::Upper => "upper",
        }
    }
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown bound method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub method: BoundMethod,
    pub k_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Zero for closed forms.
    pub mc_se: Vec<f64>,
    pub beta: f64,
    pub lambda_total: f64,
    pub reps: usize,
    pub seed: u64,
}

fn check_k(k: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Domain {
            value: k,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

fn check_lambda(lambda_total: f64) -> Result<()> {
    if !(lambda_total.is_finite() && lambda_total > 0.0) {
        return Err(invalid("expected arrival count must be positive"));
    }
    Ok(())
}

/// Static-threshold lower bound with the finite-budget correction,
/// `(1−F₁(α)) · min((k − 1/Λ)/(1−F_S(α)), 1)`, clamped at 0.
pub fn bound_static(model: &ScoreModel, lambda_total: f64, k: f64, alpha: f64) -> Result<f64> {
    check_lambda(lambda_total)?;
    static_form(model, k - 1.0 / lambda_total, k, alpha)
}

/// The same bound with `1/Λ` dropped (the large-Λ form).
pub fn bound_static_asymptotic(model: &ScoreModel, k: f64, alpha: f64) -> Result<f64> {
    static_form(model, k, k, alpha)
}

fn static_form(model: &ScoreModel, budget: f64, k: f64, alpha: f64) -> Result<f64> {
    check_k(k)?;
    let pass = 1.0 - model.fs().cdf_at(alpha);
    if pass <= 0.0 {
        return Ok(0.0);
    }
    let caught = 1.0 - model.f1().cdf_at(alpha);
    Ok((caught * (budget / pass).min(1.0)).clamp(0.0, 1.0))
}

/// `α* = F_S⁻¹(1 − k)`; the top of the support when `k = 0`.
pub fn optimal_static_threshold(model: &ScoreModel, k: f64) -> Result<f64> {
    check_k(k)?;
    if k == 0.0 {
        return Ok(model.fs().support().1);
    }
    model.fs().quantile(1.0 - k)
}

/// `1 − F₁(α*)`.
pub fn bound_static_optimal(model: &ScoreModel, k: f64) -> Result<f64> {
    let alpha = optimal_static_threshold(model, k)?;
    Ok(1.0 - model.f1().cdf_at(alpha))
}

pub fn bound_random(lambda_total: f64, k: f64) -> Result<f64> {
    check_lambda(lambda_total)?;
    Ok((k - 1.0 / lambda_total).max(0.0))
}

/// `min(k/β, 1)`: no policy can catch more frauds than it inspects.
pub fn upper_bound(beta: f64, k: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain {
            value: beta,
            lo: 0.0,
            hi: 1.0,
        });
    }
    check_k(k)?;
    Ok((k / beta).min(1.0))
}

/// Monte Carlo evaluation of the dynamic-threshold lower bound.
///
/// Each replication walks the inspection times: with `j` inspections left
/// the wait to the next one has hazard `(1 − F_S(α_j(t))) λ(t)`, sampled by
/// inverting the trapezoid cumulative hazard on the curves' grid. Every
/// inspection that lands inside the horizon adds `q(α_j)` at its time. The
/// estimate is the mean sum divided by `Λ(τ)`.
pub fn bound_dynamic_mc<R: Rng + ?Sized>(
    model: &ScoreModel,
    rate: &RateFunction,
    curves: &CriticalCurveSet,
    k: f64,
    reps: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_k(k)?;
    if reps == 0 {
        return Err(invalid("at least one replication is required"));
    }
    let lambda_total = rate.total();
    check_lambda(lambda_total)?;
    let n_k = capacity_for(k, lambda_total);
    if n_k == 0 {
        return Ok((0.0, 0.0));
    }
    if n_k > curves.budget() {
        return Err(invalid(format!(
            "curves solved for {} inspections, budget is {n_k}",
            curves.budget()
        )));
    }
    if (curves.horizon() - rate.horizon()).abs() > 1e-9 * rate.horizon() {
        return Err(invalid("curve and rate horizons differ"));
    }

    let grid = curves.grid_times();
    let lam: Vec<f64> = grid.iter().map(|&t| rate.rate(t)).collect();
    // hazard[j-1][g]: cumulative hazard of curve j from 0 to t_g.
    let hazard: Vec<Vec<f64>> = (1..=n_k)
        .map(|j| {
            let a = curves.curve(j).expect("index checked");
            let m: Vec<f64> = a
                .iter()
                .zip(&lam)
                .map(|(&alpha, &l)| (1.0 - model.fs().cdf_at(alpha)) * l)
                .collect();
            let mut h = Vec::with_capacity(grid.len());
            h.push(0.0);
            for g in 1..grid.len() {
                let dt = grid[g] - grid[g - 1];
                h.push(h[g - 1] + 0.5 * dt * (m[g] + m[g - 1]));
            }
            h
        })
        .collect();

    let mut sums = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut t = 0.0;
        let mut total = 0.0;
        for j in (1..=n_k).rev() {
            let h = &hazard[j - 1];
            let target = interp(grid, h, t) + rng.sample::<f64, _>(Exp1);
            if target > *h.last().unwrap() {
                break;
            }
            t = invert(grid, h, target, t);
            let alpha = curves.value_at(j, t);
            total += q_ratio(model, alpha).value;
        }
        sums.push(total);
    }
    let (m, se) = mean_se(&sums).expect("reps > 0");
    Ok((m / lambda_total, se / lambda_total))
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let g = xs.partition_point(|&v| v <= x);
    if g == 0 {
        return ys[0];
    }
    if g == xs.len() {
        return *ys.last().unwrap();
    }
    let w = (x - xs[g - 1]) / (xs[g] - xs[g - 1]);
    ys[g - 1] + w * (ys[g] - ys[g - 1])
}

/// First `x ≥ floor` with piecewise-linear `ys(x) = target`; `ys` is
/// nondecreasing and `target ≤ ys.last()`.
fn invert(xs: &[f64], ys: &[f64], target: f64, floor: f64) -> f64 {
    let g = ys.partition_point(|&v| v < target);
    if g == 0 {
        return xs[0].max(floor);
    }
    let (y0, y1) = (ys[g - 1], ys[g]);
    let x = if y1 > y0 {
        xs[g - 1] + (target - y0) / (y1 - y0) * (xs[g] - xs[g - 1])
    } else {
        xs[g]
    };
    x.max(floor)
}

/// Density of the `i`-th smallest of `n` i.i.d. draws from a base CDF.
#[derive(Debug, Clone)]
pub struct OrderStatPdf<'a> {
    base: &'a ScoreCdf,
    n: u64,
    i: u64,
    ln_coef: f64,
}

/// `i · C(n, i)` in log space, with `n` into the thousands.
pub fn order_stat_pdf(base: &ScoreCdf, n: u64, i: u64) -> Result<OrderStatPdf<'_>> {
    if i == 0 || i > n {
        return Err(invalid(format!("rank {i} outside 1..={n}")));
    }
    let ln_coef = (i as f64).ln() + ln_gamma(n as f64 + 1.0)
        - ln_gamma(i as f64 + 1.0)
        - ln_gamma((n - i) as f64 + 1.0);
    Ok(OrderStatPdf { base, n, i, ln_coef })
}

/// `a · ln(x)` with `0 · ln 0 = 0`.
fn xlogy(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * x.ln()
    }
}

impl OrderStatPdf<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        let f = self.base.density(x);
        if f <= 0.0 {
            return 0.0;
        }
        let p = self.base.cdf_at(x);
        let ln = self.ln_coef
            + xlogy((self.i - 1) as f64, p)
            + xlogy((self.n - self.i) as f64, 1.0 - p)
            + f.ln();
        ln.exp()
    }

    /// `P(X_(i) ≤ x) = P(Bin(n, F(x)) ≥ i)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let p = self.base.cdf_at(x);
        binomial_upper_tail(self.n, p, self.i)
    }
}

/// `P(Bin(n, p) ≥ r)` by summing log-space terms from the shorter side.
pub fn binomial_upper_tail(n: u64, p: f64, r: u64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    if r > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let ln_n = ln_gamma(n as f64 + 1.0);
    let term = |i: u64| {
        (ln_n - ln_gamma(i as f64 + 1.0) - ln_gamma((n - i) as f64 + 1.0)
            + i as f64 * lp
            + (n - i) as f64 * lq)
            .exp()
    };
    if n - r < r {
        (r..=n).map(term).sum::<f64>().min(1.0)
    } else {
        (1.0 - (0..r).map(term).sum::<f64>()).clamp(0.0, 1.0)
    }
}

/// Precomputed pieces for the batch bound.
struct BatchEvaluator {
    /// `ln F` and `ln(1 − F)` for the non-fraud and fraud CDFs on the grid.
    logs: [(Vec<f64>, Vec<f64>); 2],
    ln_fact: Vec<f64>,
    memo: HashMap<(u64, u64), f64>,
}

/// Knots of `d`, keeping every m-th one (plus the last) when there are more
/// than `BATCH_GRID_POINTS` of them. Large ECDFs would otherwise make the
/// grid as big as the training set.
fn thinned_knots(d: &ScoreCdf) -> impl Iterator<Item = f64> + '_ {
    let k = d.knots();
    let step = k.len().div_ceil(BATCH_GRID_POINTS).max(1);
    let last = k.len() - 1;
    k.iter()
        .enumerate()
        .filter(move |&(i, _)| i % step == 0 || i == last)
        .map(|(_, &x)| x)
}

impl BatchEvaluator {
    fn new(model: &ScoreModel) -> Self {
        let mut grid: Vec<f64> = (0..=BATCH_GRID_POINTS)
            .map(|g| g as f64 / BATCH_GRID_POINTS as f64)
            .chain(thinned_knots(model.f0()))
            .chain(thinned_knots(model.f1()))
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let logs_for = |d: &ScoreCdf| -> (Vec<f64>, Vec<f64>) {
            grid.iter()
                .map(|&s| {
                    let p = d.cdf_at(s);
                    (p.ln(), (-p).ln_1p())
                })
                .unzip()
        };
        BatchEvaluator {
            logs: [logs_for(model.f0()), logs_for(model.f1())],
            ln_fact: vec![0.0],
            memo: HashMap::new(),
        }
    }

    fn ensure_fact(&mut self, n: u64) {
        while (self.ln_fact.len() as u64) <= n {
            let i = self.ln_fact.len() as f64;
            self.ln_fact.push(ln_gamma(i + 1.0));
        }
    }

    /// `tails[g][idx] = P(X_(n−idx) ≤ s_g)` for the top `m` ranks of `n`
    /// draws, flattened row-major.
    fn top_rank_cdfs(&self, side: usize, n: u64, m: usize) -> Vec<f64> {
        let (lp, lq) = &self.logs[side];
        let ln_n = self.ln_fact[n as usize];
        let mut out = vec![0.0; lp.len() * m];
        for (g, row) in out.chunks_mut(m).enumerate() {
            let (a, b) = (lp[g], lq[g]);
            if a == f64::NEG_INFINITY {
                continue; // F = 0: nothing below s
            }
            if b == f64::NEG_INFINITY {
                row.fill(1.0);
                continue;
            }
            let mut acc = 0.0;
            for (idx, cell) in row.iter_mut().enumerate() {
                let i = n as usize - idx;
                let ln_pmf = ln_n - self.ln_fact[i] - self.ln_fact[n as usize - i]
                    + i as f64 * a
                    + (n as usize - i) as f64 * b;
                acc += ln_pmf.exp();
                *cell = acc.min(1.0);
            }
        }
        out
    }

    /// `E[frauds in the top n_k | N₀ = n0, N₁ = n1]`.
    fn expected_catches(&mut self, n0: u64, n1: u64, n_k: u64) -> f64 {
        if let Some(&v) = self.memo.get(&(n0, n1)) {
            return v;
        }
        let j_max = n_k.min(n1);
        if j_max == 0 {
            return 0.0;
        }
        self.ensure_fact(n0.max(n1));
        // Fraud ranks ρ₁(j) = n1 − j + 1, i.e. idx = j − 1.
        let c1 = self.top_rank_cdfs(1, n1, j_max as usize);
        // Non-fraud ranks ρ₀(j) = n0 − n_k + j, i.e. idx = n_k − j; only
        // those with ρ₀ ≥ 1 are needed.
        let m0 = (n_k.min(n0)) as usize;
        let c0 = if m0 > 0 {
            self.top_rank_cdfs(0, n0, m0)
        } else {
            Vec::new()
        };
        let m1 = j_max as usize;
        let cells = self.logs[0].0.len();
        let mut total = 0.0;
        for j in 1..=j_max {
            let idx1 = (j - 1) as usize;
            if n0 + j < n_k + 1 {
                // ρ₀(j) < 1: fewer than n_k − j + 1 non-frauds compete.
                total += 1.0;
                continue;
            }
            let idx0 = (n_k - j) as usize;
            debug_assert!(idx0 < m0);
            // P(S⁰_(ρ₀) < S¹_(ρ₁)) = ∫ C₀ dC₁, trapezoid in C₀.
            let mut p = 0.0;
            for g in 1..cells {
                let d1 = c1[g * m1 + idx1] - c1[(g - 1) * m1 + idx1];
                if d1 != 0.0 {
                    p += d1 * 0.5 * (c0[g * m0 + idx0] + c0[(g - 1) * m0 + idx0]);
                }
            }
            total += p.clamp(0.0, 1.0);
        }
        self.memo.insert((n0, n1), total);
        total
    }
}

/// `E[frauds in the top n_k]` given the class counts, by numeric
/// integration of the order-statistic distributions.
pub fn expected_batch_catches(model: &ScoreModel, n0: u64, n1: u64, n_k: u64) -> f64 {
    BatchEvaluator::new(model).expected_catches(n0, n1, n_k)
}

/// Monte Carlo over the class counts of the batch-selection lower bound
/// `E[Σ_j P(j-th best fraud beats its competitor)] / (βΛ)`.
pub fn bound_batch_mc<R: Rng + ?Sized>(
    model: &ScoreModel,
    lambda_total: f64,
    k: f64,
    reps: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_k(k)?;
    check_lambda(lambda_total)?;
    if reps == 0 {
        return Err(invalid("at least one replication is required"));
    }
    let beta = model.beta();
    if beta <= 0.0 {
        return Err(invalid("batch bound needs a positive fraud prior"));
    }
    let n_k = capacity_for(k, lambda_total) as u64;
    let pois0 = Poisson::new((1.0 - beta) * lambda_total)
        .map_err(|e| invalid(format!("poisson: {e}")))?;
    let pois1 = Poisson::new(beta * lambda_total).map_err(|e| invalid(format!("poisson: {e}")))?;
    let mut eval = BatchEvaluator::new(model);
    let mut sums = Vec::with_capacity(reps);
    for _ in 0..reps {
        let n0 = pois0.sample(rng) as u64;
        let n1 = pois1.sample(rng) as u64;
        sums.push(eval.expected_catches(n0, n1, n_k));
    }
    let (m, se) = mean_se(&sums).expect("reps > 0");
    let scale = beta * lambda_total;
    Ok(((m / scale).min(1.0), se / scale))
}
