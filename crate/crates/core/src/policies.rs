//! Streaming selection policies and empirical detection rates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curves::CriticalCurveSet;
use crate::error::{invalid, Error, Result};
use crate::nhpp::{simulate_arrivals, RateFunction};
use crate::scoredist::ScoreModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub score: f64,
    pub label: bool,
}

/// One horizon of scored arrivals in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    records: Vec<Record>,
    tau: f64,
}

impl Episode {
    pub fn new(records: Vec<Record>, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid("episode horizon must be positive"));
        }
        let mut prev = 0.0;
        for r in &records {
            if !(r.t >= prev && r.t <= tau) {
                return Err(Error::Domain {
                    value: r.t,
                    lo: prev,
                    hi: tau,
                });
            }
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Domain {
                    value: r.score,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
            prev = r.t;
        }
        Ok(Episode { records, tau })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn horizon(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frauds(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Static,
    StaticOptimal,
    Dynamic,
    Random,
    Batch,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Static,
        PolicyKind::StaticOptimal,
        PolicyKind::Dynamic,
        PolicyKind::Random,
        PolicyKind::Batch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Static => "static",
            PolicyKind::StaticOptimal => "static_optimal",
            PolicyKind::Dynamic => "dynamic",
            PolicyKind::Random => "random",
            PolicyKind::Batch => "batch",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| invalid(format!("unknown policy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InspectionOutcome {
    pub policy: PolicyKind,
    /// Indices into the episode's records, ascending.
    pub selected: Vec<usize>,
    pub frauds_caught: usize,
    pub frauds_total: usize,
    pub capacity: usize,
}

impl InspectionOutcome {
    fn from_selection(policy: PolicyKind, ep: &Episode, selected: Vec<usize>, n_k: usize) -> Self {
        let frauds_caught = selected.iter().filter(|&&i| ep.records[i].label).count();
        InspectionOutcome {
            policy,
            selected,
            frauds_caught,
            frauds_total: ep.frauds(),
            capacity: n_k,
        }
    }

    /// `None` when the episode had no frauds.
    pub fn ratio(&self) -> Option<f64> {
        (self.frauds_total > 0).then(|| self.frauds_caught as f64 / self.frauds_total as f64)
    }
}

/// `⌊kΛ⌋`. The tiny slack keeps decimal inputs like `0.1 × 3219` from
/// landing one below the intended integer.
pub fn capacity_for(k: f64, lambda_total: f64) -> usize {
    let x = k * lambda_total;
    if !(x > 0.0) {
        return 0;
    }
    (x + 1e-9 * x.max(1.0)).floor() as usize
}

/// Selects every arrival with `score ≥ alpha` until the budget runs out.
pub fn run_static(ep: &Episode, alpha: f64, n_k: usize) -> InspectionOutcome {
    let selected: Vec<usize> = ep
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.score >= alpha)
        .map(|(i, _)| i)
        .take(n_k)
        .collect();
    InspectionOutcome::from_selection(PolicyKind::Static, ep, selected, n_k)
}

/// With `j` inspections left at time `t`, selects iff `score > α_j(t)`.
pub fn run_dynamic(ep: &Episode, curves: &CriticalCurveSet, n_k: usize) -> Result<InspectionOutcome> {
    if n_k > curves.budget() {
        return Err(invalid(format!(
            "curves solved for {} inspections, budget is {n_k}",
            curves.budget()
        )));
    }
    let mut left = n_k;
    let mut selected = Vec::with_capacity(n_k);
    for (i, r) in ep.records.iter().enumerate() {
        if left == 0 {
            break;
        }
        if r.score > curves.value_at(left, r.t) {
            selected.push(i);
            left -= 1;
        }
    }
    Ok(InspectionOutcome::from_selection(
        PolicyKind::Dynamic,
        ep,
        selected,
        n_k,
    ))
}

/// How the random policy picks arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomScheme {
    /// A uniformly random subset of `min(n_k, N)` of the day's arrivals.
    #[default]
    Uniform,
    /// Each arrival independently with probability `k`, stopping at `n_k`.
    Bernoulli,
}

impl FromStr for RandomScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(RandomScheme::Uniform),
            "bernoulli" => Ok(RandomScheme::Bernoulli),
            _ => Err(invalid(format!("unknown random scheme '{s}'"))),
        }
    }
}

pub fn run_random<R: Rng + ?Sized>(
    ep: &Episode,
    k: f64,
    n_k: usize,
    scheme: RandomScheme,
    rng: &mut R,
) -> InspectionOutcome {
    let selected = match scheme {
        RandomScheme::Uniform => {
            let m = n_k.min(ep.len());
            let mut idx = rand::seq::index::sample(rng, ep.len(), m).into_vec();
            idx.sort_unstable();
            idx
        }
        RandomScheme::Bernoulli => {
            let mut idx = Vec::new();
            for i in 0..ep.len() {
                if idx.len() == n_k {
                    break;
                }
                if rng.random::<f64>() < k {
                    idx.push(i);
                }
            }
            idx
        }
    };
    InspectionOutcome::from_selection(PolicyKind::Random, ep, selected, n_k)
}

/// Offline: the `n_k` highest scores of the day. Ties go to the earlier
/// arrival, then to the earlier record.
pub fn run_batch(ep: &Episode, n_k: usize) -> InspectionOutcome {
    let mut order: Vec<usize> = (0..ep.len()).collect();
    let recs = &ep.records;
    order.sort_by(|&a, &b| {
        recs[b]
            .score
            .total_cmp(&recs[a].score)
            .then(recs[a].t.total_cmp(&recs[b].t))
            .then(a.cmp(&b))
    });
    order.truncate(n_k);
    order.sort_unstable();
    InspectionOutcome::from_selection(PolicyKind::Batch, ep, order, n_k)
}

/// Frauds caught by the static policy at every threshold in `alphas` at once.
///
/// Equivalent to calling [`run_static`] per threshold but costs
/// `O((N + |alphas|) log N)`: records are added to position-indexed Fenwick
/// trees in decreasing score order, and the `n_k`-th passing position is
/// found by a tree descent.
pub fn static_frauds_caught(ep: &Episode, alphas: &[f64], n_k: usize) -> Vec<usize> {
    let n = ep.len();
    let recs = &ep.records;
    let mut by_score: Vec<usize> = (0..n).collect();
    by_score.sort_by(|&a, &b| recs[b].score.total_cmp(&recs[a].score));

    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| alphas[b].total_cmp(&alphas[a]));

    let mut all = Fenwick::new(n);
    let mut fraud = Fenwick::new(n);
    let mut inserted = 0;
    let mut next = 0;
    let mut out = vec![0; alphas.len()];
    for ai in order {
        let alpha = alphas[ai];
        while next < n && recs[by_score[next]].score >= alpha {
            let pos = by_score[next];
            all.add(pos, 1);
            if recs[pos].label {
                fraud.add(pos, 1);
            }
            inserted += 1;
            next += 1;
        }
        out[ai] = if n_k == 0 {
            0
        } else if inserted <= n_k {
            fraud.prefix(n)
        } else {
            fraud.prefix(all.lower_bound(n_k) + 1)
        };
    }
    out
}

/// Counts over positions `0..n`.
struct Fenwick {
    tree: Vec<usize>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, pos: usize, v: usize) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..end`.
    fn prefix(&self, end: usize) -> usize {
        let mut i = end;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Smallest position whose prefix sum through it reaches `target ≥ 1`.
    fn lower_bound(&self, target: usize) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut rem = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let nxt = pos + step;
            if nxt <= n && self.tree[nxt] < rem {
                pos = nxt;
                rem -= self.tree[nxt];
            }
            step >>= 1;
        }
        pos
    }
}

/// Simulated day: NHPP arrivals, Bernoulli(β) labels, class-conditional
/// scores.
pub fn synth_episode<R: Rng + ?Sized>(
    rate: &RateFunction,
    model: &ScoreModel,
    rng: &mut R,
) -> Episode {
    let arrivals = simulate_arrivals(rate, rng);
    let beta = model.beta();
    let records = arrivals
        .times()
        .iter()
        .map(|&t| {
            let label = rng.random::<f64>() < beta;
            let score = if label {
                model.f1().sample(rng)
            } else {
                model.f0().sample(rng)
            };
            Record { t, score, label }
        })
        .collect();
    Episode {
        records,
        tau: rate.horizon(),
    }
}

/// Mean and standard error of caught/total over episodes that had frauds.
pub fn detection_rate(outcomes: &[InspectionOutcome]) -> Result<(f64, f64)> {
    let ratios: Vec<f64> = outcomes.iter().filter_map(|o| o.ratio()).collect();
    mean_se(&ratios).ok_or_else(|| Error::Undefined("no episode contains a fraud".into()))
}

/// Sample mean and its standard error; `None` for an empty slice.
pub fn mean_se(xs: &[f64]) -> Option<(f64, f64)> {
    let m = xs.len();
    if m == 0 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    Some((mean, (var / m as f64).sqrt()))
}

/// Empirical detection rate against capacity for one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub policy: PolicyKind,
    pub k_grid: Vec<f64>,
    pub psi_mean: Vec<f64>,
    pub psi_se: Vec<f64>,
    pub episodes_used: Vec<usize>,
}
