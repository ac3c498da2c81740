//! Score distributions: continuous piecewise-linear CDFs on `[0, 1]`.
//!
//! Densities are piecewise constant, so tail integrals such as the partial
//! expectation `φ(α) = ∫_α^1 (1 − F(s)) ds` are piecewise quadratic and are
//! evaluated in closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{invalid, Error, Result};

/// Width used to spread a point mass (or a tie at the lower end of the
/// sample) so the fitted CDF stays continuous and invertible.
pub const TIE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CdfFile", into = "CdfFile")]
pub struct ScoreCdf {
    knots: Vec<f64>,
    probs: Vec<f64>,
    /// `∫_{knots[i]}^{1} (1 − F)`.
    tail: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CdfFile {
    knots: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<CdfFile> for ScoreCdf {
    type Error = Error;
    fn try_from(f: CdfFile) -> Result<Self> {
        ScoreCdf::new(f.knots, f.probs)
    }
}

impl From<ScoreCdf> for CdfFile {
    fn from(c: ScoreCdf) -> Self {
        CdfFile {
            knots: c.knots,
            probs: c.probs,
        }
    }
}

impl ScoreCdf {
    pub fn new(knots: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if knots.len() != probs.len() {
            return Err(invalid("knots and probs differ in length"));
        }
        if knots.len() < 2 {
            return Err(invalid("a score CDF needs at least two knots"));
        }
        if knots.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(invalid("knots must lie in [0, 1]"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("knots must be strictly increasing"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("CDF values must lie in [0, 1]"));
        }
        if probs.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("CDF values must be nondecreasing"));
        }
        if probs[0] != 0.0 || *probs.last().unwrap() != 1.0 {
            return Err(invalid("CDF must start at 0 and end at 1"));
        }
        let n = knots.len();
        let mut tail = vec![0.0; n];
        for i in (0..n - 1).rev() {
            let h = knots[i + 1] - knots[i];
            tail[i] = tail[i + 1] + h * (1.0 - 0.5 * (probs[i] + probs[i + 1]));
        }
        Ok(ScoreCdf { knots, probs, tail })
    }

    pub fn uniform() -> Self {
        ScoreCdf::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap()
    }

    /// Uniform distribution on `[lo, hi] ⊂ [0, 1]`.
    pub fn uniform_on(lo: f64, hi: f64) -> Result<Self> {
        ScoreCdf::new(vec![lo, hi], vec![0.0, 1.0])
    }

    /// Beta(a, b) CDF sampled at `points + 1` evenly spaced knots.
    pub fn beta_shaped(a: f64, b: f64, points: usize) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) || points == 0 {
            return Err(invalid("beta shape needs positive parameters and knots"));
        }
        let knots: Vec<f64> = (0..=points).map(|i| i as f64 / points as f64).collect();
        let mut probs: Vec<f64> = knots.iter().map(|&x| beta_reg(a, b, x)).collect();
        let mut run = 0.0f64;
        for p in probs.iter_mut() {
            run = run.max(p.clamp(0.0, 1.0));
            *p = run;
        }
        probs[0] = 0.0;
        probs[points] = 1.0;
        ScoreCdf::new(knots, probs)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(infimum, supremum)` of the support.
    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn segment(&self, s: f64) -> usize {
        let idx = self.knots.partition_point(|&k| k <= s);
        idx.saturating_sub(1).min(self.knots.len() - 2)
    }

    /// `F(s)` for any real `s` (0 below the support, 1 above).
    pub fn cdf_at(&self, s: f64) -> f64 {
        let (lo, hi) = self.support();
        if s <= lo {
            return 0.0;
        }
        if s >= hi {
            return 1.0;
        }
        let i = self.segment(s);
        let (s0, s1) = (self.knots[i], self.knots[i + 1]);
        let (p0, p1) = (self.probs[i], self.probs[i + 1]);
        p0 + (p1 - p0) * (s - s0) / (s1 - s0)
    }

    pub fn cdf(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.cdf_at(s))
    }

    /// Smallest `s` with `F(s) ≥ u`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        Ok(self.quantile_at(u))
    }

    fn quantile_at(&self, u: f64) -> f64 {
        let m = self.probs.partition_point(|&p| p < u);
        if m == 0 {
            return self.knots[0];
        }
        let i = m - 1;
        let (s0, s1) = (self.knots[i], self.knots[i + 1]);
        let (p0, p1) = (self.probs[i], self.probs[i + 1]);
        (s0 + (s1 - s0) * (u - p0) / (p1 - p0)).clamp(s0, s1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile_at(rng.random::<f64>())
    }

    /// Piecewise-constant density (right-continuous at knots).
    pub fn density(&self, s: f64) -> f64 {
        let (lo, hi) = self.support();
        if s < lo || s > hi {
            return 0.0;
        }
        let i = self.segment(s);
        (self.probs[i + 1] - self.probs[i]) / (self.knots[i + 1] - self.knots[i])
    }

    /// `φ(α) = ∫_α^1 (1 − F(s)) ds = E[max(S − α, 0)]`.
    pub fn partial_expectation(&self, alpha: f64) -> f64 {
        let (lo, hi) = self.support();
        if alpha >= hi {
            return 0.0;
        }
        if alpha <= lo {
            return self.tail[0] + (lo - alpha);
        }
        let i = self.segment(alpha);
        let s1 = self.knots[i + 1];
        let f_alpha = self.cdf_at(alpha);
        (s1 - alpha) * (1.0 - 0.5 * (f_alpha + self.probs[i + 1])) + self.tail[i + 1]
    }

    pub fn mean(&self) -> f64 {
        self.partial_expectation(0.0)
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain {
            value: x,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

/// Continuous ECDF: linear interpolation through `(x₍ᵢ₎, (i−1)/(n−1))`,
/// i.e. the inverse of the usual interpolated sample quantile. Ties collapse
/// onto the largest index; a tie at the minimum gets a zero knot `ε` to its
/// left so the result is strictly increasing on its support.
pub fn fit_ecdf(samples: &[f64]) -> Result<ScoreCdf> {
    if samples.len() < 2 {
        return Err(invalid("fitting an ECDF needs at least two samples"));
    }
    if samples.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(invalid("scores must lie in [0, 1]"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let denom = (n - 1) as f64;

    let mut knots = Vec::new();
    let mut probs = Vec::new();
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == v {
            j += 1;
        }
        knots.push(v);
        probs.push(j as f64 / denom);
        i = j + 1;
    }
    if probs[0] > 0.0 {
        knots.insert(0, knots[0] - TIE_EPSILON);
        probs.insert(0, 0.0);
    }
    enforce_strict_unit(&mut knots);
    let last = probs.len() - 1;
    probs[last] = 1.0;
    ScoreCdf::new(knots, probs)
}

/// Moves knots by multiples of `TIE_EPSILON` until they are strictly
/// increasing inside `[0, 1]`.
fn enforce_strict_unit(knots: &mut [f64]) {
    knots[0] = knots[0].max(0.0);
    for i in 1..knots.len() {
        if knots[i] <= knots[i - 1] {
            knots[i] = knots[i - 1] + TIE_EPSILON;
        }
    }
    let last = knots.len() - 1;
    if knots[last] > 1.0 {
        knots[last] = 1.0;
        for i in (0..last).rev() {
            if knots[i] >= knots[i + 1] {
                knots[i] = knots[i + 1] - TIE_EPSILON;
            }
        }
    }
}

/// `(1 − β)·F₀ + β·F₁`, exact on the union of both knot sets.
pub fn mixture(f0: &ScoreCdf, f1: &ScoreCdf, beta: f64) -> Result<ScoreCdf> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("mixture weight {beta} outside [0, 1]")));
    }
    let mut knots: Vec<f64> = f0.knots.iter().chain(&f1.knots).copied().collect();
    knots.sort_by(|a, b| a.total_cmp(b));
    knots.dedup();
    let mut probs: Vec<f64> = knots
        .iter()
        .map(|&s| (1.0 - beta) * f0.cdf_at(s) + beta * f1.cdf_at(s))
        .collect();
    let last = probs.len() - 1;
    probs[0] = 0.0;
    probs[last] = 1.0;
    ScoreCdf::new(knots, probs)
}

/// Class prior `β = P(Y = 1)` with the two class-conditional score CDFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct ScoreModel {
    beta: f64,
    f0: ScoreCdf,
    f1: ScoreCdf,
    fs: ScoreCdf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    beta: f64,
    f0: ScoreCdf,
    f1: ScoreCdf,
}

impl TryFrom<ModelFile> for ScoreModel {
    type Error = Error;
    fn try_from(m: ModelFile) -> Result<Self> {
        ScoreModel::new(m.beta, m.f0, m.f1)
    }
}

impl From<ScoreModel> for ModelFile {
    fn from(m: ScoreModel) -> Self {
        ModelFile {
            beta: m.beta,
            f0: m.f0,
            f1: m.f1,
        }
    }
}

impl ScoreModel {
    /// `beta` may be 0 (no positives) but must stay below 1.
    pub fn new(beta: f64, f0: ScoreCdf, f1: ScoreCdf) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid(format!("class prior {beta} outside [0, 1)")));
        }
        let fs = mixture(&f0, &f1, beta)?;
        Ok(ScoreModel { beta, f0, f1, fs })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Negative-class (majority) score CDF.
    pub fn f0(&self) -> &ScoreCdf {
        &self.f0
    }

    /// Positive-class (minority) score CDF.
    pub fn f1(&self) -> &ScoreCdf {
        &self.f1
    }

    /// Marginal score CDF.
    pub fn fs(&self) -> &ScoreCdf {
        &self.fs
    }

    pub fn q_ratio(&self, alpha: f64) -> QRatio {
        q_ratio(self, alpha)
    }
}

/// `(1 − F₁(α)) / (1 − F_S(α))`, with `exhausted` set when no score mass
/// remains above `α` (value then 0 by convention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QRatio {
    pub value: f64,
    pub exhausted: bool,
}

pub fn q_ratio(model: &ScoreModel, alpha: f64) -> QRatio {
    let tail_s = 1.0 - model.fs.cdf_at(alpha);
    if tail_s <= 0.0 {
        return QRatio {
            value: 0.0,
            exhausted: true,
        };
    }
    QRatio {
        value: (1.0 - model.f1.cdf_at(alpha)) / tail_s,
        exhausted: false,
    }
}

/// `q(α) = β·(1 − F₁(α)) / (1 − F_S(α))`: probability that an arrival
/// scoring above `α` is a positive.
pub fn q_scaled(model: &ScoreModel, alpha: f64) -> f64 {
    (model.beta * q_ratio(model, alpha).value).min(1.0)
}
