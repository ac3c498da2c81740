//! Critical curves for dynamic thresholds.
//!
//! With `j` inspections left at time `t`, an arrival with score `S` is taken
//! iff `S > α_j(t)`. The curves solve the lower-triangular system
//!
//! ```text
//! dα_j/dt = −λ(t) · (φ(α_j(t)) − φ(α_{j−1}(t))),   φ(α_0) ≡ 0,   α_j(T) = 0
//! ```
//!
//! where `φ` is the partial expectation of the marginal score distribution.
//! The whole vector `(α_1, …, α_n)` is integrated backward from `T` with
//! classical RK4 on a shared uniform grid. Component `j` of every RK stage
//! only reads components `1..=j`, so solving for budget `n` and reading
//! curve `j` gives bit-identical values to solving for budget `j`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::nhpp::RateFunction;
use crate::scoredist::ScoreCdf;

pub const DEFAULT_GRID_SIZE: usize = 4096;

/// Where a curve set came from; used as a cache key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub rate_hash: String,
    pub model_hash: String,
    pub steps: usize,
}

/// JSON sidecar written next to the curve matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub n: usize,
    pub grid_size: usize,
    pub tau: f64,
    #[serde(flatten)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalCurveSet {
    grid_times: Vec<f64>,
    /// `alpha[j - 1][g] = α_j(t_g)`.
    alpha: Vec<Vec<f64>>,
    provenance: Provenance,
}

/// Short SHA-256 fingerprint of a value's JSON form.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn solve_curves(
    rate: &RateFunction,
    fs: &ScoreCdf,
    n: usize,
    grid_size: usize,
) -> Result<CriticalCurveSet> {
    if n == 0 {
        return Err(invalid("budget must be at least 1"));
    }
    if grid_size < 2 {
        return Err(invalid("grid needs at least 2 points"));
    }
    let horizon = rate.horizon();
    let steps = grid_size - 1;
    let h = horizon / steps as f64;
    let grid_times: Vec<f64> = (0..grid_size)
        .map(|g| if g == steps { horizon } else { g as f64 * h })
        .collect();

    let mut alpha = vec![vec![0.0; grid_size]; n];
    let mut state = vec![0.0; n];
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut stage = vec![0.0; n];

    // dα/dt at (t, a) written into `out`.
    let rhs = |t: f64, a: &[f64], out: &mut [f64]| {
        let lam = rate.rate(t);
        let mut prev = 0.0;
        for (o, &aj) in out.iter_mut().zip(a) {
            let phi = fs.partial_expectation(aj);
            *o = -lam * (phi - prev);
            prev = phi;
        }
    };

    for g in (1..grid_size).rev() {
        let t = grid_times[g];
        let t_mid = t - 0.5 * h;
        let t_next = grid_times[g - 1];

        rhs(t, &state, &mut k[0]);
        for j in 0..n {
            stage[j] = state[j] - 0.5 * h * k[0][j];
        }
        rhs(t_mid, &stage, &mut k[1]);
        for j in 0..n {
            stage[j] = state[j] - 0.5 * h * k[1][j];
        }
        rhs(t_mid, &stage, &mut k[2]);
        for j in 0..n {
            stage[j] = state[j] - h * k[2][j];
        }
        rhs(t_next, &stage, &mut k[3]);

        let mut upper = 1.0f64;
        for j in 0..n {
            let incr = h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
            let next = state[j] - incr;
            if !next.is_finite() {
                return Err(Error::Solver {
                    curve: j + 1,
                    t: t_next,
                });
            }
            // Backward in time the exact solution never decreases; a stiff
            // step (large λh) can overshoot, so hold the previous value.
            let next = next.max(state[j]).min(upper);
            state[j] = next;
            alpha[j][g - 1] = next;
            upper = next;
        }
    }

    Ok(CriticalCurveSet {
        grid_times,
        alpha,
        provenance: Provenance {
            rate_hash: fingerprint(rate),
            model_hash: fingerprint(fs),
            steps,
        },
    })
}

impl CriticalCurveSet {
    /// Number of curves (the largest budget this set can serve).
    pub fn budget(&self) -> usize {
        self.alpha.len()
    }

    pub fn grid_times(&self) -> &[f64] {
        &self.grid_times
    }

    pub fn horizon(&self) -> f64 {
        *self.grid_times.last().unwrap()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Grid values of `α_j`, `1 ≤ j ≤ n`.
    pub fn curve(&self, j: usize) -> Result<&[f64]> {
        self.check_index(j)?;
        Ok(&self.alpha[j - 1])
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.alpha.len() {
            return Err(invalid(format!(
                "curve index {j} outside 1..={}",
                self.alpha.len()
            )));
        }
        Ok(())
    }

    /// `α_j(t)` by linear interpolation on the grid; `t` is clamped to
    /// `[0, T]`.
    pub fn threshold_at(&self, j: usize, t: f64) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.value_at(j, t))
    }

    pub(crate) fn value_at(&self, j: usize, t: f64) -> f64 {
        let curve = &self.alpha[j - 1];
        let steps = self.grid_times.len() - 1;
        let horizon = self.horizon();
        let t = t.clamp(0.0, horizon);
        let pos = t / horizon * steps as f64;
        let g = (pos.floor() as usize).min(steps - 1);
        let w = pos - g as f64;
        if w <= 0.0 {
            return curve[g];
        }
        curve[g] + w * (curve[g + 1] - curve[g])
    }

    /// The first `n` curves; identical to solving with budget `n`.
    pub fn truncated(&self, n: usize) -> Result<CriticalCurveSet> {
        self.check_index(n)?;
        Ok(CriticalCurveSet {
            grid_times: self.grid_times.clone(),
            alpha: self.alpha[..n].to_vec(),
            provenance: self.provenance.clone(),
        })
    }

    /// Checks terminal zeros, ordering across curves, forward-time
    /// monotonicity and the `[0, 1]` range. Returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let last = self.grid_times.len() - 1;
        for (idx, curve) in self.alpha.iter().enumerate() {
            let j = idx + 1;
            if curve[last] != 0.0 {
                return Err(format!("alpha_{j}(T) = {} != 0", curve[last]));
            }
            if let Some(g) = curve.iter().position(|a| !(0.0..=1.0).contains(a)) {
                return Err(format!("alpha_{j} out of [0,1] at grid point {g}"));
            }
            if let Some(g) = (0..last).find(|&g| curve[g + 1] > curve[g]) {
                return Err(format!("alpha_{j} increases after grid point {g}"));
            }
            if idx > 0 {
                let prev = &self.alpha[idx - 1];
                if let Some(g) = (0..=last).find(|&g| curve[g] > prev[g]) {
                    return Err(format!("alpha_{j} > alpha_{} at grid point {g}", j - 1));
                }
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> CurveMeta {
        CurveMeta {
            n: self.budget(),
            grid_size: self.grid_times.len(),
            tau: self.horizon(),
            provenance: self.provenance.clone(),
        }
    }

    /// `t,alpha_1,…,alpha_n` matrix, one grid point per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 1..=self.budget() {
            out.push_str(&format!(",alpha_{j}"));
        }
        out.push('\n');
        for (g, t) in self.grid_times.iter().enumerate() {
            out.push_str(&t.to_string());
            for curve in &self.alpha {
                out.push(',');
                out.push_str(&curve[g].to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, meta: &CurveMeta) -> Result<CriticalCurveSet> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| invalid("empty curve file"))?;
        let cols = header.split(',').count();
        if cols != meta.n + 1 || !header.starts_with('t') {
            return Err(invalid("curve header does not match sidecar"));
        }
        let mut grid_times = Vec::with_capacity(meta.grid_size);
        let mut alpha = vec![Vec::with_capacity(meta.grid_size); meta.n];
        for (row, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| invalid(format!("bad number in curve row {}", row + 2)))
            };
            grid_times.push(parse(fields.next())?);
            for curve in alpha.iter_mut() {
                curve.push(parse(fields.next())?);
            }
        }
        if grid_times.len() != meta.grid_size || grid_times.len() < 2 {
            return Err(invalid("curve row count does not match sidecar"));
        }
        Ok(CriticalCurveSet {
            grid_times,
            alpha,
            provenance: meta.provenance.clone(),
        })
    }

    /// Curves that are identically zero, as produced for a zero rate. Useful
    /// for exercising the dynamic policy without a solve.
    pub fn zeros(n: usize, horizon: f64, grid_size: usize) -> Result<CriticalCurveSet> {
        let rate = RateFunction::constant(0.0, horizon)?;
        solve_curves(&rate, &ScoreCdf::uniform(), n, grid_size)
    }
}
