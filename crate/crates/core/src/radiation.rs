//! Perceived-activity model, Chernoff error bounds, exponent solving,
//! inhomogeneous-Poisson count simulation by thinning, and the
//! likelihood-ratio test.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RadiationError {
    #[error("no exponent in (0,1) satisfies the false-alarm budget; the decision is infeasible (E_F(1) = {e_f_at_one}, need {needed})")]
    Infeasible { e_f_at_one: f64, needed: f64 },
    #[error("false-alarm exponent is not monotone on (0,1); integrand invalid")]
    NotMonotone,
    #[error("non-finite integrand in Chernoff bound")]
    NonFinite,
}

/// Background activity, counts/s: constant or piecewise constant over
/// `[t_i, t_{i+1})` intervals.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Background {
    Constant(f64),
    /// `(start time, rate)` pairs, sorted by start time; the first entry
    /// should start at 0.
    Piecewise(Vec<(f64, f64)>),
}

impl Background {
    pub fn rate(&self, t: f64) -> f64 {
        match self {
            Background::Constant(b) => *b,
            Background::Piecewise(steps) => {
                let mut r = steps.first().map(|s| s.1).unwrap_or(0.0);
                for &(start, rate) in steps {
                    if t >= start {
                        r = rate;
                    }
                }
                r
            }
        }
    }
}

/// Source/background/detector parameters and the false-alarm budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionProblem {
    /// Source activity, counts/s.
    pub source_activity: f64,
    /// Detector cross-section, m².
    pub cross_section: f64,
    pub background: Background,
    /// Decision horizon, s.
    pub horizon: f64,
    /// False-alarm budget α ∈ (0, 1).
    pub alpha: f64,
}

impl Default for DetectionProblem {
    /// Reference constants: 50 µCi Cf-252 source (2.2e5 cps), Domino
    /// detector cross-section 2.12e-6 m², background 0.005833 cps,
    /// T = 20 s, α = 0.001.
    fn default() -> Self {
        Self {
            source_activity: 2.2e5,
            cross_section: 2.12e-6,
            background: Background::Constant(0.005833),
            horizon: 20.0,
            alpha: 0.001,
        }
    }
}

/// A rate or ratio signal sampled on a time grid; evaluated by linear
/// interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(times.windows(2).all(|w| w[1] > w[0]), "times must increase");
        Self { times, values }
    }

    pub fn constant(value: f64, horizon: f64, n: usize) -> Self {
        let times = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
        Self { times, values: vec![value; n] }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= *self.times.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let idx = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[idx], self.times[idx + 1]);
        let (v0, v1) = (self.values[idx], self.values[idx + 1]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trapezoidal integral over the sampled span.
    pub fn integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
            .sum()
    }

    /// Trapezoidal integral of `f(t, value)` over the sampled span.
    pub fn integral_of(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (f(t[0], v[0]) + f(t[1], v[1])) * (t[1] - t[0]))
            .sum()
    }
}

/// Perceived source activity and relative strength along a trajectory:
/// `ν = χa / (2χ + d²)`, `μ = 1 + ν/b`.
pub fn perceived_rates(
    distances: &SampledSignal,
    problem: &DetectionProblem,
) -> (SampledSignal, SampledSignal) {
    let chi = problem.cross_section;
    let a = problem.source_activity;
    let nu_vals: Vec<f64> =
        distances.values.iter().map(|d| chi * a / (2.0 * chi + d * d)).collect();
    let mu_vals: Vec<f64> = nu_vals
        .iter()
        .zip(&distances.times)
        .map(|(nu, &t)| 1.0 + nu / problem.background.rate(t))
        .collect();
    (
        SampledSignal::new(distances.times.clone(), nu_vals),
        SampledSignal::new(distances.times.clone(), mu_vals),
    )
}

/// Chernoff quantities for exponent `p`:
/// `E_F(p) = ∫ (p·μᵖ·ln μ - μᵖ + 1)·b ds` and
/// `Λ'(p) = ∫ (μᵖ·ln μ - μ + 1)·b ds`.
pub fn chernoff_bounds(
    mu: &SampledSignal,
    background: &Background,
    p: f64,
) -> Result<(f64, f64), RadiationError> {
    let e_f = mu.integral_of(|t, m| {
        let lm = m.ln();
        (p * m.powf(p) * lm - m.powf(p) + 1.0) * background.rate(t)
    });
    let lambda_prime = mu.integral_of(|t, m| {
        let lm = m.ln();
        (m.powf(p) * lm - m + 1.0) * background.rate(t)
    });
    if !e_f.is_finite() || !lambda_prime.is_finite() {
        return Err(RadiationError::NonFinite);
    }
    Ok((e_f, lambda_prime))
}

/// Fully solved detection setup for one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolvedDetection {
    pub p: f64,
    pub e_f: f64,
    pub lambda_prime: f64,
    /// Log bound on missed detection: `E_M = ln α + Λ'(p)`.
    pub e_m: f64,
    /// LRT threshold `γ = exp(Λ'(p))`.
    pub gamma: f64,
    /// Bound on the missed-detection probability, clipped to 1.
    pub pm_bound: f64,
}

/// Solves `E_F(p) = -ln α` for `p ∈ (0, 1)` by bisection to 1e-9 after a
/// 32-point monotonicity check.
pub fn solve_exponent(
    mu: &SampledSignal,
    background: &Background,
    alpha: f64,
) -> Result<f64, RadiationError> {
    let needed = -alpha.ln();
    let e_f = |p: f64| chernoff_bounds(mu, background, p).map(|(e, _)| e);
    // Monotonicity pre-check on a coarse grid.
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=32 {
        let p = i as f64 / 32.0;
        let v = e_f(p)?;
        if v < prev - 1e-12 {
            return Err(RadiationError::NotMonotone);
        }
        prev = v;
    }
    let at_one = e_f(1.0)?;
    if at_one <= needed + 1e-12 {
        return Err(RadiationError::Infeasible { e_f_at_one: at_one, needed });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = e_f(mid)?;
        if (v - needed).abs() <= 1e-9 {
            return Ok(mid);
        }
        if v < needed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    if (e_f(p)? - needed).abs() <= 1e-9 {
        Ok(p)
    } else {
        Err(RadiationError::NotMonotone)
    }
}

/// Solves the exponent and assembles thresholds/bounds; an infeasible
/// exponent yields `pm_bound = 1` with `p = 1`.
pub fn solve_detection(
    mu: &SampledSignal,
    background: &Background,
    alpha: f64,
) -> Result<SolvedDetection, RadiationError> {
    match solve_exponent(mu, background, alpha) {
        Ok(p) => {
            let (e_f, lambda_prime) = chernoff_bounds(mu, background, p)?;
            let e_m = alpha.ln() + lambda_prime;
            Ok(SolvedDetection {
                p,
                e_f,
                lambda_prime,
                e_m,
                gamma: lambda_prime.exp(),
                pm_bound: e_m.exp().min(1.0),
            })
        }
        Err(RadiationError::Infeasible { .. }) => {
            let (e_f, lambda_prime) = chernoff_bounds(mu, background, 1.0)?;
            Ok(SolvedDetection {
                p: 1.0,
                e_f,
                lambda_prime,
                e_m: 0.0,
                gamma: lambda_prime.exp(),
                pm_bound: 1.0,
            })
        }
        Err(e) => Err(e),
    }
}

/// Jump times of a counting record over `[0, T]`, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountRecord {
    pub jump_times: Vec<f64>,
}

/// Simulates an inhomogeneous Poisson process with rate `λ(t)` by
/// thinning: homogeneous candidates at `λ_max` accepted with probability
/// `λ(t)/λ_max`.
pub fn simulate_counts<R: Rng>(rate: &SampledSignal, horizon: f64, rng: &mut R) -> CountRecord {
    let lambda_max = rate.max_value().max(0.0);
    let mut jump_times = Vec::new();
    if lambda_max <= 0.0 {
        return CountRecord { jump_times };
    }
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += -u.ln() / lambda_max;
        if t > horizon {
            break;
        }
        let accept: f64 = rng.random();
        if accept * lambda_max <= rate.value_at(t) {
            jump_times.push(t);
        }
    }
    CountRecord { jump_times }
}

/// Likelihood-ratio statistic
/// `L_T = exp(-∫ν ds) · Π (1 + ν(τ_n)/b(τ_n))` and the decision
/// `H₁ ⇔ L_T > γ`.
pub fn likelihood_ratio_test(
    record: &CountRecord,
    nu: &SampledSignal,
    background: &Background,
    gamma: f64,
) -> (f64, bool) {
    let mut log_lt = -nu.integral();
    for &tau in &record.jump_times {
        log_lt += (1.0 + nu.value_at(tau) / background.rate(tau)).ln();
    }
    let lt = log_lt.exp();
    (lt, lt > gamma)
}
