//! Non-homogeneous Poisson processes on a finite horizon `[0, τ]`.
//!
//! The intensity is piecewise linear between knots, so the cumulative rate
//! `Λ(t)` is piecewise quadratic and both `Λ` and `Λ⁻¹` have closed forms.
//! Arrivals are generated by inversion: unit-exponential increments are
//! accumulated on the `Λ` scale and mapped back through `Λ⁻¹`.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Piecewise-linear intensity `λ(t)` on `[0, τ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateFile", into = "RateFile")]
pub struct RateFunction {
    knot_times: Vec<f64>,
    knot_rates: Vec<f64>,
    /// `Λ` at each knot.
    cum: Vec<f64>,
}

/// On-disk form: `{tau, knot_times[], knot_rates[]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RateFile {
    tau: f64,
    knot_times: Vec<f64>,
    knot_rates: Vec<f64>,
}

impl TryFrom<RateFile> for RateFunction {
    type Error = Error;

    fn try_from(file: RateFile) -> Result<Self> {
        let last = file.knot_times.last().copied().unwrap_or(f64::NAN);
        if last != file.tau {
            return Err(invalid(format!(
                "tau {} does not match last knot time {last}",
                file.tau
            )));
        }
        RateFunction::new(file.knot_times, file.knot_rates)
    }
}

impl From<RateFunction> for RateFile {
    fn from(rate: RateFunction) -> Self {
        RateFile {
            tau: rate.horizon(),
            knot_times: rate.knot_times,
            knot_rates: rate.knot_rates,
        }
    }
}

impl RateFunction {
    /// Builds a rate from knots. The first knot must be at 0 and the last one
    /// defines the horizon `τ`.
    pub fn new(knot_times: Vec<f64>, knot_rates: Vec<f64>) -> Result<Self> {
        if knot_times.len() != knot_rates.len() {
            return Err(invalid("knot_times and knot_rates differ in length"));
        }
        if knot_times.len() < 2 {
            return Err(invalid("a rate function needs at least two knots"));
        }
        if knot_times[0] != 0.0 {
            return Err(invalid("first knot must be at t = 0"));
        }
        if knot_times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("knot times must be finite"));
        }
        if knot_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("knot times must be strictly increasing"));
        }
        if knot_rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("rates must be finite and nonnegative"));
        }
        let mut cum = Vec::with_capacity(knot_times.len());
        cum.push(0.0);
        for i in 0..knot_times.len() - 1 {
            let h = knot_times[i + 1] - knot_times[i];
            let area = 0.5 * h * (knot_rates[i] + knot_rates[i + 1]);
            cum.push(cum[i] + area);
        }
        Ok(RateFunction {
            knot_times,
            knot_rates,
            cum,
        })
    }

    pub fn constant(rate: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        RateFunction::new(vec![0.0, tau], vec![rate, rate])
    }

    pub fn horizon(&self) -> f64 {
        *self.knot_times.last().unwrap()
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn knot_rates(&self) -> &[f64] {
        &self.knot_rates
    }

    /// `Λ(τ)`, the expected number of arrivals over the horizon.
    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// The same shape multiplied by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        RateFunction::new(
            self.knot_times.clone(),
            self.knot_rates.iter().map(|r| r * factor).collect(),
        )
    }

    fn segment(&self, t: f64) -> usize {
        let idx = self.knot_times.partition_point(|&k| k <= t);
        idx.saturating_sub(1).min(self.knot_times.len() - 2)
    }

    /// `λ(t)`; zero outside `[0, τ]`.
    pub fn rate(&self, t: f64) -> f64 {
        if !(0.0..=self.horizon()).contains(&t) {
            return 0.0;
        }
        let i = self.segment(t);
        let (t0, t1) = (self.knot_times[i], self.knot_times[i + 1]);
        let (r0, r1) = (self.knot_rates[i], self.knot_rates[i + 1]);
        r0 + (r1 - r0) * (t - t0) / (t1 - t0)
    }

    /// `Λ(t) = ∫₀ᵗ λ(u) du`, exact.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        let tau = self.horizon();
        if !(0.0..=tau).contains(&t) {
            return Err(Error::Domain {
                value: t,
                lo: 0.0,
                hi: tau,
            });
        }
        Ok(self.cumulative_clamped(t))
    }

    /// `Λ(t)` with `t` clamped into `[0, τ]`.
    pub fn cumulative_clamped(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon());
        let i = self.segment(t);
        let h = self.knot_times[i + 1] - self.knot_times[i];
        let x = t - self.knot_times[i];
        let (r0, r1) = (self.knot_rates[i], self.knot_rates[i + 1]);
        self.cum[i] + r0 * x + (r1 - r0) * x * x / (2.0 * h)
    }

    /// Smallest `t` with `Λ(t) ≥ u`. Flat (zero-rate) stretches resolve to
    /// their left endpoint.
    pub fn inverse_cumulative(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::Domain {
                value: u,
                lo: 0.0,
                hi: self.total(),
            });
        }
        if u > self.total() {
            return Err(Error::Range {
                value: u,
                max: self.total(),
            });
        }
        let m = self.cum.partition_point(|&c| c < u);
        if m == 0 {
            return Ok(0.0);
        }
        // Λ(t_{m-1}) < u ≤ Λ(t_m): solve a·x² + b·x = d inside the segment.
        let i = m - 1;
        let h = self.knot_times[i + 1] - self.knot_times[i];
        let (r0, r1) = (self.knot_rates[i], self.knot_rates[i + 1]);
        let d = u - self.cum[i];
        let a = (r1 - r0) / (2.0 * h);
        let disc = (r0 * r0 + 4.0 * a * d).max(0.0);
        let denom = r0 + disc.sqrt();
        let x = if denom > 0.0 { 2.0 * d / denom } else { h };
        Ok(self.knot_times[i] + x.clamp(0.0, h))
    }
}

/// Sorted arrival times on `[0, τ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSequence {
    times: Vec<f64>,
    tau: f64,
}

impl ArrivalSequence {
    pub fn new(times: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid("horizon must be positive and finite"));
        }
        if let Some(&t) = times.iter().find(|t| !(0.0..=tau).contains(*t)) {
            return Err(Error::Domain {
                value: t,
                lo: 0.0,
                hi: tau,
            });
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("arrival times must be nondecreasing"));
        }
        Ok(ArrivalSequence { times, tau })
    }

    pub fn empty(tau: f64) -> Self {
        ArrivalSequence {
            times: Vec::new(),
            tau,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One realization of the process on `[0, τ]`.
pub fn simulate_arrivals<R: Rng + ?Sized>(rate: &RateFunction, rng: &mut R) -> ArrivalSequence {
    let total = rate.total();
    let mut times = Vec::with_capacity((total * 1.1) as usize + 8);
    let mut u = 0.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        u += e;
        if u > total {
            break;
        }
        // u ≤ Λ(τ) by the check above.
        times.push(rate.inverse_cumulative(u).expect("u within range"));
    }
    ArrivalSequence {
        times,
        tau: rate.horizon(),
    }
}

/// Waiting time from `γ` to the next event, or the fact that there is none
/// before `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaitTime {
    After(f64),
    BeyondHorizon,
}

impl WaitTime {
    pub fn within(self) -> Option<f64> {
        match self {
            WaitTime::After(w) => Some(w),
            WaitTime::BeyondHorizon => None,
        }
    }
}

/// Draws `T_γ` with density `λ(γ+t)·exp(−∫₀ᵗ λ(γ+u) du)`, as
/// `Λ⁻¹(Λ(γ) + E) − γ`.
pub fn sample_next_arrival<R: Rng + ?Sized>(
    rate: &RateFunction,
    gamma: f64,
    rng: &mut R,
) -> Result<WaitTime> {
    let tau = rate.horizon();
    if !(0.0..tau).contains(&gamma) {
        return Err(Error::Domain {
            value: gamma,
            lo: 0.0,
            hi: tau,
        });
    }
    let e: f64 = rng.sample(Exp1);
    let target = rate.cumulative_clamped(gamma) + e;
    if target > rate.total() {
        return Ok(WaitTime::BeyondHorizon);
    }
    let t = rate.inverse_cumulative(target)?;
    Ok(WaitTime::After((t - gamma).max(0.0)))
}

/// Independent Bernoulli(p) split of an arrival sequence into `(A, B)`.
pub fn split_thinning<R: Rng + ?Sized>(
    arrivals: &ArrivalSequence,
    p: f64,
    rng: &mut R,
) -> Result<(ArrivalSequence, ArrivalSequence)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &t in &arrivals.times {
        if rng.random::<f64>() < p {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    let tau = arrivals.tau;
    Ok((
        ArrivalSequence { times: a, tau },
        ArrivalSequence { times: b, tau },
    ))
}

/// Merges two sequences into one sorted sequence.
pub fn superpose(a: &ArrivalSequence, b: &ArrivalSequence) -> ArrivalSequence {
    let mut times = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a.times[i] <= b.times[j] {
            times.push(a.times[i]);
            i += 1;
        } else {
            times.push(b.times[j]);
            j += 1;
        }
    }
    times.extend_from_slice(&a.times[i..]);
    times.extend_from_slice(&b.times[j..]);
    ArrivalSequence {
        times,
        tau: a.tau.max(b.tau),
    }
}

/// How a binned rate estimate is turned into a [`RateFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateEstimate {
    /// Knots at bin midpoints, edge values repeated at 0 and τ. Smooth, but
    /// total mass differs from the histogram by the interpolation error.
    #[default]
    Interpolated,
    /// The step histogram itself. Each jump becomes a symmetric ramp of
    /// width `2δ` (`δ` = 1e-7 bin widths), which has exactly the step's area,
    /// so `Λ(τ)` equals the mean episode count.
    PiecewiseConstant,
}

const STEP_HALF_WIDTH: f64 = 1e-7;

/// Histogram estimate of `λ` from i.i.d. episodes sharing one horizon.
pub fn estimate_rate(
    episodes: &[ArrivalSequence],
    bins: usize,
    mode: RateEstimate,
) -> Result<RateFunction> {
    let first = episodes
        .first()
        .ok_or_else(|| invalid("no episodes to estimate a rate from"))?;
    if bins == 0 {
        return Err(invalid("bins must be at least 1"));
    }
    let tau = first.tau;
    if episodes.iter().any(|e| e.tau != tau) {
        return Err(invalid("episodes have different horizons"));
    }
    let width = tau / bins as f64;
    let mut counts = vec![0usize; bins];
    for ep in episodes {
        for &t in &ep.times {
            let b = ((t / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    let norm = episodes.len() as f64 * width;
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / norm).collect();

    match mode {
        RateEstimate::Interpolated => {
            let mut times = Vec::with_capacity(bins + 2);
            let mut values = Vec::with_capacity(bins + 2);
            times.push(0.0);
            values.push(rates[0]);
            for (b, &r) in rates.iter().enumerate() {
                times.push((b as f64 + 0.5) * width);
                values.push(r);
            }
            times.push(tau);
            values.push(rates[bins - 1]);
            RateFunction::new(times, values)
        }
        RateEstimate::PiecewiseConstant => {
            let delta = STEP_HALF_WIDTH * width;
            let mut times = vec![0.0];
            let mut values = vec![rates[0]];
            for b in 1..bins {
                let edge = b as f64 * width;
                times.push(edge - delta);
                values.push(rates[b - 1]);
                times.push(edge + delta);
                values.push(rates[b]);
            }
            times.push(tau);
            values.push(rates[bins - 1]);
            RateFunction::new(times, values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Stream};

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn gap_rate() -> RateFunction {
        // rate 2 on [0,1], ramps down to 0 at t=1..2, zero on [2,3], back up.
        RateFunction::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
            vec![2.0, 2.0, 0.0, 0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn cumulative_examples() {
        let c = RateFunction::constant(2.0, 3.0).unwrap();
        assert_eq!(c.cumulative(3.0).unwrap(), 6.0);
        assert_eq!(c.cumulative(0.0).unwrap(), 0.0);
        assert_eq!(gap_rate().cumulative(0.0).unwrap(), 0.0);

        let tri = RateFunction::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        let quad = simpson(|t| tri.rate(t), 0.0, 1.0, 1000);
        assert!((quad - 1.0).abs() < 1e-12);
        assert!((tri.cumulative(1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cumulative_matches_quadrature_inside_segments() {
        let r = gap_rate();
        for &t in &[0.3, 1.0, 1.7, 2.5, 3.2, 4.0] {
            // Simpson is exact on each linear piece, so integrate knot to knot.
            let mut edges: Vec<f64> = r.knot_times().iter().copied().filter(|&k| k < t).collect();
            edges.push(t);
            let q: f64 = edges.windows(2).map(|w| simpson(|u| r.rate(u), w[0], w[1], 8)).sum();
            assert!((r.cumulative(t).unwrap() - q).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn cumulative_rejects_out_of_domain() {
        let c = RateFunction::constant(2.0, 3.0).unwrap();
        assert!(matches!(c.cumulative(3.5), Err(Error::Domain { .. })));
        assert!(matches!(c.cumulative(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn inverse_examples() {
        let c = RateFunction::constant(2.0, 3.0).unwrap();
        assert_eq!(c.inverse_cumulative(6.0).unwrap(), 3.0);
        assert_eq!(c.inverse_cumulative(0.0).unwrap(), 0.0);
        assert!(matches!(
            c.inverse_cumulative(6.5),
            Err(Error::Range { .. })
        ));

        // Λ(2) = 2 + 1 = 3 and Λ stays at 3 over the gap [2, 3].
        let g = gap_rate();
        assert_eq!(g.cumulative(2.0).unwrap(), 3.0);
        assert_eq!(g.cumulative(3.0).unwrap(), 3.0);
        assert_eq!(g.inverse_cumulative(3.0).unwrap(), 2.0);
    }

    #[test]
    fn inverse_round_trips_where_rate_positive() {
        let g = gap_rate();
        for i in 0..=400 {
            let t = i as f64 * 0.01;
            if g.rate(t) > 0.0 {
                let back = g.inverse_cumulative(g.cumulative(t).unwrap()).unwrap();
                assert!((back - t).abs() <= 1e-9 * t.max(1.0), "t={t} back={back}");
            }
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(RateFunction::new(vec![0.0], vec![1.0]).is_err());
        assert!(RateFunction::new(vec![0.5, 1.0], vec![1.0, 1.0]).is_err());
        assert!(RateFunction::new(vec![0.0, 1.0, 1.0], vec![1.0; 3]).is_err());
        assert!(RateFunction::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn zero_rate_gives_no_arrivals() {
        let z = RateFunction::constant(0.0, 10.0).unwrap();
        let mut rng = seeded(1, 0, Stream::Misc);
        assert!(simulate_arrivals(&z, &mut rng).is_empty());
        for _ in 0..100 {
            let w = sample_next_arrival(&z, 3.0, &mut rng).unwrap();
            assert_eq!(w, WaitTime::BeyondHorizon);
        }
    }

    #[test]
    fn arrivals_sorted_and_in_range() {
        let g = gap_rate().scaled(20.0).unwrap();
        let mut rng = seeded(2, 0, Stream::Misc);
        let a = simulate_arrivals(&g, &mut rng);
        assert!(a.times().windows(2).all(|w| w[0] <= w[1]));
        assert!(a.times().iter().all(|t| (0.0..=4.0).contains(t)));
        // nothing inside the open zero-rate gap
        assert!(a.times().iter().all(|&t| !(t > 2.0 && t < 3.0)));
    }

    #[test]
    fn count_mean_matches_poisson() {
        let r = RateFunction::constant(4.0, 5.0).unwrap();
        let reps = 10_000;
        let mut rng = seeded(3, 0, Stream::Misc);
        let total: usize = (0..reps)
            .map(|_| simulate_arrivals(&r, &mut rng).len())
            .sum();
        let mean = total as f64 / reps as f64;
        let lam = r.total();
        assert!((mean - lam).abs() <= 3.0 * (lam / reps as f64).sqrt(), "{mean}");
    }

    #[test]
    fn next_arrival_rejects_gamma_outside() {
        let r = RateFunction::constant(1.0, 2.0).unwrap();
        let mut rng = seeded(4, 0, Stream::Misc);
        assert!(sample_next_arrival(&r, 2.0, &mut rng).is_err());
        assert!(sample_next_arrival(&r, -1.0, &mut rng).is_err());
    }

    #[test]
    fn next_arrival_homogeneous_is_exponential() {
        let lam = 2.0;
        let r = RateFunction::constant(lam, 1000.0).unwrap();
        let mut rng = seeded(5, 0, Stream::Misc);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .filter_map(|_| sample_next_arrival(&r, 1.0, &mut rng).unwrap().within())
            .collect();
        assert_eq!(draws.len(), n);
        let m1 = draws.iter().sum::<f64>() / n as f64;
        let m2 = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // Exp(λ): mean 1/λ, sd 1/λ; E[X²] = 2/λ², sd(X²) = √20/λ².
        let se1 = (1.0 / lam) / (n as f64).sqrt();
        let se2 = (20.0f64).sqrt() / (lam * lam) / (n as f64).sqrt();
        assert!((m1 - 1.0 / lam).abs() < 3.0 * se1, "m1={m1}");
        assert!((m2 - 2.0 / (lam * lam)).abs() < 3.0 * se2, "m2={m2}");
    }

    #[test]
    fn thinning_extremes_and_superposition() {
        let r = RateFunction::constant(50.0, 1.0).unwrap();
        let mut rng = seeded(6, 0, Stream::Misc);
        let arr = simulate_arrivals(&r, &mut rng);
        let (a, b) = split_thinning(&arr, 1.0, &mut rng).unwrap();
        assert_eq!(a, arr);
        assert!(b.is_empty());
        let (a, b) = split_thinning(&arr, 0.3, &mut rng).unwrap();
        assert_eq!(superpose(&a, &b), arr);
        assert!(split_thinning(&arr, 1.5, &mut rng).is_err());
    }

    #[test]
    fn estimate_simple_cases() {
        let one = ArrivalSequence::new(vec![0.1, 0.2, 0.5, 0.9], 1.0).unwrap();
        for mode in [RateEstimate::Interpolated, RateEstimate::PiecewiseConstant] {
            let r = estimate_rate(std::slice::from_ref(&one), 1, mode).unwrap();
            assert!(r.knot_rates().iter().all(|&x| x == 4.0));
        }
        let two = vec![
            ArrivalSequence::new(vec![0.1, 0.6], 1.0).unwrap(),
            ArrivalSequence::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0], 1.0).unwrap(),
        ];
        let r = estimate_rate(&two, 1, RateEstimate::Interpolated).unwrap();
        assert!(r.knot_rates().iter().all(|&x| x == 4.0));
        assert!(estimate_rate(&[], 3, RateEstimate::Interpolated).is_err());
        assert!(estimate_rate(&two, 0, RateEstimate::Interpolated).is_err());
    }

    #[test]
    fn piecewise_constant_estimate_preserves_mass() {
        let r = gap_rate().scaled(30.0).unwrap();
        let mut rng = seeded(7, 0, Stream::Misc);
        let eps: Vec<_> = (0..25).map(|_| simulate_arrivals(&r, &mut rng)).collect();
        let total: usize = eps.iter().map(|e| e.len()).sum();
        let mean = total as f64 / eps.len() as f64;
        for bins in [1, 7, 24, 100] {
            let est = estimate_rate(&eps, bins, RateEstimate::PiecewiseConstant).unwrap();
            let lam = est.cumulative(est.horizon()).unwrap();
            assert!((lam - mean).abs() <= 1e-9 * mean, "bins={bins} {lam} vs {mean}");
        }
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let g = gap_rate();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"tau\":4.0"));
        let back: RateFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"tau":5.0,"knot_times":[0.0,4.0],"knot_rates":[1.0,1.0]}"#;
        assert!(serde_json::from_str::<RateFunction>(bad).is_err());
    }
}
