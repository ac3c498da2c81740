use std::f64::consts::PI;

use triage_core::nhpp::{
    estimate_rate, sample_next_arrival, simulate_arrivals, split_thinning, superpose,
    ArrivalSequence, RateEstimate, RateFunction, WaitTime,
};
use triage_core::rng::{seeded, Stream};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn day_profile() -> RateFunction {
    RateFunction::new(
        vec![0.0, 6.0, 12.0, 15.0, 20.0, 24.0],
        vec![5.0, 20.0, 80.0, 60.0, 30.0, 5.0],
    )
    .unwrap()
}

#[test]
fn poisson_count_variance_at_thousand() {
    let rate = RateFunction::constant(1000.0 / 3600.0, 3600.0).unwrap();
    assert!((rate.total() - 1000.0).abs() < 1e-9);
    let counts: Vec<f64> = (0..10_000)
        .map(|i| simulate_arrivals(&rate, &mut seeded(100, i, Stream::Episodes)).len() as f64)
        .collect();
    let (m, v) = mean_var(&counts);
    assert!((m - 1000.0).abs() <= 4.0 * (1000.0f64 / 10_000.0).sqrt());
    assert!((v / 1000.0 - 1.0).abs() < 0.05, "variance {v}");
}

#[test]
fn piecewise_count_mean_within_four_se() {
    let rate = day_profile();
    let reps = 10_000;
    let counts: Vec<f64> = (0..reps)
        .map(|i| simulate_arrivals(&rate, &mut seeded(101, i, Stream::Episodes)).len() as f64)
        .collect();
    let (m, _) = mean_var(&counts);
    let lam = rate.total();
    assert!((m - lam).abs() <= 4.0 * (lam / reps as f64).sqrt());
}

#[test]
fn disjoint_interval_counts_are_uncorrelated() {
    let rate = day_profile();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..10_000 {
        let arr = simulate_arrivals(&rate, &mut seeded(102, i, Stream::Episodes));
        a.push(arr.times().iter().filter(|&&t| t < 12.0).count() as f64);
        b.push(arr.times().iter().filter(|&&t| t >= 12.0).count() as f64);
    }
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    let corr = cov / (va * vb).sqrt();
    // Sample correlation of independent counts has sd ≈ 1/√R.
    assert!(corr.abs() < 4.0 / 100.0, "corr {corr}");
    assert!((ma - rate.cumulative(12.0).unwrap()).abs() < 4.0 * (va / 1e4).sqrt());
}

#[test]
fn thinned_streams_are_poisson_with_scaled_mean() {
    let rate = day_profile();
    let lam = rate.total();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..10_000 {
        let mut rng = seeded(103, i, Stream::Episodes);
        let arr = simulate_arrivals(&rate, &mut rng);
        let (x, y) = split_thinning(&arr, 0.3, &mut rng).unwrap();
        assert_eq!(superpose(&x, &y), arr);
        a.push(x.len() as f64);
        b.push(y.len() as f64);
    }
    for (xs, share) in [(&a, 0.3), (&b, 0.7)] {
        let (m, v) = mean_var(xs);
        let target = share * lam;
        assert!((m - target).abs() < 4.0 * (target / 1e4).sqrt());
        // Poisson: variance equals mean; the ratio's sd is about √(2/R).
        assert!((v / target - 1.0).abs() < 5.0 * (2.0f64 / 1e4).sqrt(), "variance ratio {}", v / target);
    }
}

/// `P(T ≤ t)` from the wait-time density by nested trapezoid quadrature of
/// the rate alone (no closed-form cumulative).
fn wait_cdf_by_quadrature(rate: &RateFunction, gamma: f64, ts: &[f64], steps: usize) -> Vec<f64> {
    let span = rate.horizon() - gamma;
    let h = span / steps as f64;
    let mut inner = 0.0;
    let mut outer = 0.0;
    let mut prev_density = rate.rate(gamma);
    let mut cdf_grid = vec![0.0];
    for s in 1..=steps {
        let u = s as f64 * h;
        inner += 0.5 * h * (rate.rate(gamma + u - h) + rate.rate(gamma + u));
        let density = rate.rate(gamma + u) * (-inner).exp();
        outer += 0.5 * h * (prev_density + density);
        prev_density = density;
        cdf_grid.push(outer);
    }
    ts.iter()
        .map(|&t| {
            let pos = (t / h).min(steps as f64);
            let i = (pos.floor() as usize).min(steps - 1);
            let w = pos - i as f64;
            cdf_grid[i] + w * (cdf_grid[i + 1] - cdf_grid[i])
        })
        .collect()
}

#[test]
fn next_arrival_distribution_matches_density_integral() {
    let rate = RateFunction::new(
        vec![0.0, 1.0, 2.0, 3.0, 5.0],
        vec![0.2, 1.5, 0.0, 0.0, 0.8],
    )
    .unwrap();
    for &gamma in &[0.0, 0.7, 2.5] {
        let mut rng = seeded(104, 0, Stream::Misc);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| match sample_next_arrival(&rate, gamma, &mut rng).unwrap() {
                WaitTime::After(t) => t,
                WaitTime::BeyondHorizon => f64::INFINITY,
            })
            .collect();
        let ts: Vec<f64> = (0..=200).map(|i| (5.0 - gamma) * i as f64 / 200.0).collect();
        let oracle = wait_cdf_by_quadrature(&rate, gamma, &ts, 200_000);
        let sup = ts
            .iter()
            .zip(&oracle)
            .map(|(&t, &f)| {
                let emp = draws.iter().filter(|&&d| d <= t).count() as f64 / draws.len() as f64;
                (emp - f).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "gamma={gamma} sup={sup}");
    }
}

#[test]
fn wait_beyond_horizon_when_rate_vanishes() {
    let rate = RateFunction::new(vec![0.0, 1.0, 2.0, 4.0], vec![3.0, 0.0, 0.0, 0.0]).unwrap();
    let mut rng = seeded(105, 0, Stream::Misc);
    for _ in 0..1000 {
        assert_eq!(
            sample_next_arrival(&rate, 1.5, &mut rng).unwrap(),
            WaitTime::BeyondHorizon
        );
    }
}

fn sinusoid(tau: f64) -> RateFunction {
    // 97 knots trace 10 + 8 sin(2πt/τ) closely enough that the
    // piecewise-linear generator is the reference.
    let times: Vec<f64> = (0..=96).map(|i| tau * i as f64 / 96.0).collect();
    let rates = times
        .iter()
        .map(|&t| 10.0 + 8.0 * (2.0 * PI * t / tau).sin())
        .collect();
    RateFunction::new(times, rates).unwrap()
}

fn l1_distance(a: &RateFunction, b: &RateFunction) -> f64 {
    let tau = a.horizon();
    let n = 20_000;
    let h = tau / n as f64;
    (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            (a.rate(t) - b.rate(t)).abs() * h
        })
        .sum()
}

#[test]
fn sinusoid_rate_is_recovered_by_binning() {
    let truth = sinusoid(24.0);
    let episodes: Vec<ArrivalSequence> = (0..200)
        .map(|i| simulate_arrivals(&truth, &mut seeded(106, i, Stream::Episodes)))
        .collect();
    for mode in [RateEstimate::Interpolated, RateEstimate::PiecewiseConstant] {
        let est = estimate_rate(&episodes, 24, mode).unwrap();
        let rel = l1_distance(&est, &truth) / truth.total();
        assert!(rel < 0.10, "{mode:?}: relative L1 {rel}");
    }
    let mean_count =
        episodes.iter().map(|e| e.len()).sum::<usize>() as f64 / episodes.len() as f64;
    let pc = estimate_rate(&episodes, 24, RateEstimate::PiecewiseConstant).unwrap();
    assert!((pc.total() - mean_count).abs() <= 1e-9 * mean_count);
}
