//! Closed-form predictions for agents that observe tasks only.
//!
//! Agents see tasks as a Poisson stream, so over a window of length `h` the
//! red and green sighting counts are independent Poisson variables with means
//! `lambda_r = alpha * M_r * h` and `lambda_g = alpha * M_g * h`. Averaging the
//! ratio rule over those counts gives the history-averaged rates
//! `gamma_r = (1 - exp(-lambda_r - lambda_g)) * lambda_r / (lambda_r + lambda_g)`,
//! which drive a linear relaxation of the red fraction at rate
//! `epsilon * (gamma_r + gamma_g)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::EnvironmentSchedule;
use crate::series::TimeSeries;

/// History-averaged switch probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedRates {
    pub gamma_r: f64,
    pub gamma_g: f64,
}

impl AveragedRates {
    pub fn total(&self) -> f64 {
        self.gamma_r + self.gamma_g
    }

    /// Stationary red fraction, `None` when no switching ever happens.
    pub fn steady_fraction(&self) -> Option<f64> {
        let total = self.total();
        (total > 0.0).then(|| self.gamma_r / total)
    }
}

fn check_fraction(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} outside [0, 1]")))
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{x} must be positive")))
    }
}

/// Probability that a window of length `h` holds at least one task sighting.
pub fn nonempty_probability(alpha: f64, h: f64, total_tasks: f64) -> f64 {
    -(-alpha * h * total_tasks).exp_m1()
}

/// Averaged rates for a task distribution that does not change in time.
pub fn gamma_bar_constant(
    alpha: f64,
    h: f64,
    total_tasks: f64,
    mu_r: f64,
) -> Result<AveragedRates> {
    check_positive("alpha", alpha)?;
    check_positive("h", h)?;
    check_positive("total_tasks", total_tasks)?;
    check_fraction("mu_r", mu_r)?;
    let c = nonempty_probability(alpha, h, total_tasks);
    Ok(AveragedRates {
        gamma_r: c * mu_r,
        gamma_g: c * (1.0 - mu_r),
    })
}

/// Averaged rates at time `t` under a changing schedule: the prefactor times
/// the window mean of the red-task fraction over `[t - h, t]`.
pub fn gamma_bar_windowed(
    schedule: &EnvironmentSchedule,
    alpha: f64,
    h: f64,
    t: f64,
) -> AveragedRates {
    let c = nonempty_probability(alpha, h, f64::from(schedule.total_tasks()));
    let w = schedule.window_mean(t, h);
    AveragedRates {
        gamma_r: c * w,
        gamma_g: c * (1.0 - w),
    }
}

/// Poisson pmf `P(k; lambda)` for `k = 0, 1, ..` until the cumulative mass
/// reaches `1 - tol`.
fn poisson_prefix(lambda: f64, tol: f64) -> Result<Vec<f64>> {
    let cap = (10.0 * (lambda + 10.0)).ceil() as usize;
    if lambda == 0.0 {
        return Ok(vec![1.0]);
    }
    let ln_lambda = lambda.ln();
    let mut ln_p = -lambda;
    let mut pmf = Vec::new();
    let mut mass = 0.0;
    for k in 0..cap {
        if k > 0 {
            ln_p += ln_lambda - (k as f64).ln();
        }
        let p = ln_p.exp();
        pmf.push(p);
        mass += p;
        if 1.0 - mass < tol && k as f64 >= lambda {
            return Ok(pmf);
        }
    }
    Err(Error::SeriesNotConverged(cap))
}

/// Averaged rates by direct double summation over the product-Poisson
/// distribution of red and green sighting counts, skipping the empty history.
pub fn gamma_bar_series(lambda_r: f64, lambda_g: f64, tol: f64) -> Result<AveragedRates> {
    for (name, l) in [("lambda_r", lambda_r), ("lambda_g", lambda_g)] {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::invalid(name, format!("{l} must be >= 0")));
        }
    }
    check_positive("tol", tol)?;
    let pr = poisson_prefix(lambda_r, tol)?;
    let pg = poisson_prefix(lambda_g, tol)?;
    let (mut gamma_r, mut gamma_g) = (0.0, 0.0);
    for (r, &a) in pr.iter().enumerate() {
        for (g, &b) in pg.iter().enumerate() {
            if r + g == 0 {
                continue;
            }
            let w = a * b / (r + g) as f64;
            gamma_r += w * r as f64;
            gamma_g += w * g as f64;
        }
    }
    Ok(AveragedRates { gamma_r, gamma_g })
}

/// Red fraction at time `t` for a constant task distribution, starting from
/// `p0`.
#[allow(clippy::too_many_arguments)]
pub fn p_r_constant(
    t: f64,
    p0: f64,
    mu_r: f64,
    alpha: f64,
    h: f64,
    total_tasks: f64,
    epsilon: f64,
) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid("t", format!("{t} must be >= 0")));
    }
    check_fraction("p0", p0)?;
    check_positive("epsilon", epsilon)?;
    let rates = gamma_bar_constant(alpha, h, total_tasks, mu_r)?;
    let total = rates.total();
    let target = rates.steady_fraction().unwrap_or(mu_r);
    Ok(mu_r + (p0 - target) * (-epsilon * total * t).exp())
}

/// Response of a relaxation `dp/dt = rate * (w(t) - p)`, where `w` is the
/// length-`h` window mean of a unit-free step of size `delta` applied at
/// `t = 0`, with `p(0) = 0`.
pub(crate) fn step_response(t: f64, delta: f64, rate: f64, h: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let kh = rate * h;
    if t <= h {
        delta * (t / h + (-rate * t).exp_m1() / kh)
    } else {
        delta * (1.0 - ((-rate * (t - h)).exp() - (-rate * t).exp()) / kh)
    }
}

/// Red fraction `t` seconds after the task fraction steps from `mu0` to
/// `mu0 + delta_mu`, assuming the population had settled at `mu0` and that
/// histories are never empty.
pub fn p_r_step(t: f64, mu0: f64, delta_mu: f64, epsilon: f64, h: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid("t", format!("{t} must be >= 0")));
    }
    check_fraction("mu0", mu0)?;
    check_fraction("mu0 + delta_mu", mu0 + delta_mu)?;
    check_positive("epsilon", epsilon)?;
    check_positive("h", h)?;
    Ok(mu0 + step_response(t, delta_mu, epsilon, h))
}

/// Mean-fraction prediction for a whole piecewise-constant schedule.
///
/// The averaged dynamics are linear, so the response is the relaxation from
/// `p0` toward the first segment plus one windowed step response per later
/// breakpoint. The decay rate includes the empty-history factor
/// `1 - exp(-alpha h M0)`; with long windows it is `epsilon` and each step
/// term reduces to [`p_r_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticModel {
    pub alpha: f64,
    pub h: f64,
    pub epsilon: f64,
    pub p0: f64,
}

impl AnalyticModel {
    pub fn validate(&self) -> Result<()> {
        check_positive("alpha", self.alpha)?;
        check_positive("h", self.h)?;
        check_positive("epsilon", self.epsilon)?;
        check_fraction("p0", self.p0)
    }

    pub fn predict(&self, schedule: &EnvironmentSchedule, t: f64) -> f64 {
        let segs = schedule.segments();
        let c = nonempty_probability(self.alpha, self.h, f64::from(schedule.total_tasks()));
        let rate = self.epsilon * c;
        let mu0 = segs[0].mu_r;
        let mut p = mu0 + (self.p0 - mu0) * (-rate * t).exp();
        for w in segs.windows(2) {
            if t > w[1].start {
                p += step_response(t - w[1].start, w[1].mu_r - w[0].mu_r, rate, self.h);
            }
        }
        p.clamp(0.0, 1.0)
    }

    pub fn trajectory(
        &self,
        schedule: &EnvironmentSchedule,
        t_end: f64,
        dt: f64,
    ) -> Result<TimeSeries> {
        self.validate()?;
        check_positive("sample_dt", dt)?;
        Ok(TimeSeries::sample(t_end, dt, |t| self.predict(schedule, t)))
    }
}

/// Probabilities `P_n` of having `n` red agents, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionOverCounts {
    probs: Vec<f64>,
}

impl DistributionOverCounts {
    pub const NORMALIZATION_TOL: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probs", "empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::invalid(
                "probs",
                format!("entry {p} is not a probability"),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::NORMALIZATION_TOL {
            return Err(Error::invalid("probs", format!("sums to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn point_mass(n_agents: usize, n: usize) -> Result<Self> {
        if n > n_agents {
            return Err(Error::invalid("n", format!("{n} exceeds N={n_agents}")));
        }
        let mut probs = vec![0.0; n_agents + 1];
        probs[n] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_agents(&self) -> usize {
        self.probs.len() - 1
    }

    /// Expected number of red agents.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| p * (n as f64 - m).powi(2))
            .sum()
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Stationary law of the birth-death chain: `Binomial(N, gamma_bar)`.
pub fn binomial_steady(n_agents: usize, gamma_bar: f64) -> Result<DistributionOverCounts> {
    if n_agents == 0 {
        return Err(Error::invalid("n_agents", "must be at least 1"));
    }
    check_fraction("gamma_bar", gamma_bar)?;
    if gamma_bar == 0.0 || gamma_bar == 1.0 {
        let n = if gamma_bar == 0.0 { 0 } else { n_agents };
        return DistributionOverCounts::point_mass(n_agents, n);
    }
    let n = n_agents as f64;
    let (ln_p, ln_q) = (gamma_bar.ln(), (-gamma_bar).ln_1p());
    let mut ln_choose = 0.0;
    let mut probs = Vec::with_capacity(n_agents + 1);
    for k in 0..=n_agents {
        if k > 0 {
            ln_choose += ((n - k as f64 + 1.0) / k as f64).ln();
        }
        probs.push((ln_choose + k as f64 * ln_p + (n - k as f64) * ln_q).exp());
    }
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    DistributionOverCounts::new(probs)
}

/// Time-indexed solution of the master equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterTrajectory {
    pub times: Vec<f64>,
    pub dists: Vec<DistributionOverCounts>,
}

impl MasterTrajectory {
    pub fn last(&self) -> &DistributionOverCounts {
        self.dists
            .last()
            .expect("trajectory holds the initial state")
    }

    /// Mean red fraction at each stored time.
    pub fn mean_fraction(&self) -> TimeSeries {
        TimeSeries {
            times: self.times.clone(),
            values: self
                .dists
                .iter()
                .map(|d| d.mean() / d.n_agents() as f64)
                .collect(),
        }
    }
}

fn master_rhs(p: &[f64], rates: AveragedRates, epsilon: f64, out: &mut [f64]) {
    let n_agents = p.len() - 1;
    // Red -> green at total rate eps * k * gamma_g, green -> red at
    // eps * (N - k) * gamma_r.
    let down = |k: usize| epsilon * k as f64 * rates.gamma_g;
    let up = |k: usize| epsilon * (n_agents - k) as f64 * rates.gamma_r;
    for k in 0..=n_agents {
        let mut d = -(down(k) + up(k)) * p[k];
        if k < n_agents {
            d += down(k + 1) * p[k + 1];
        }
        if k > 0 {
            d += up(k - 1) * p[k - 1];
        }
        out[k] = d;
    }
}

/// Integrates the birth-death master equation for the number of red agents
/// with classical fourth-order Runge-Kutta at fixed step `dt`.
///
/// `rates_at(t)` supplies the averaged rates; the step must satisfy
/// `dt <= 0.1 / (epsilon * N)`.
pub fn master_equation_solve(
    n_agents: usize,
    rates_at: impl Fn(f64) -> AveragedRates,
    epsilon: f64,
    init: &DistributionOverCounts,
    t_end: f64,
    dt: f64,
) -> Result<MasterTrajectory> {
    if n_agents == 0 || init.n_agents() != n_agents {
        return Err(Error::invalid(
            "init",
            "distribution size must be N + 1 with N >= 1",
        ));
    }
    check_positive("epsilon", epsilon)?;
    check_positive("dt", dt)?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::invalid("t_end", format!("{t_end} must be >= 0")));
    }
    let max_dt = 0.1 / (epsilon * n_agents as f64);
    if dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "dt",
            format!("{dt} exceeds stability bound {max_dt}"),
        ));
    }

    let size = n_agents + 1;
    let mut p = init.probs().to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; size],
        vec![0.0; size],
        vec![0.0; size],
        vec![0.0; size],
        vec![0.0; size],
    );
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut dists = Vec::with_capacity(steps + 1);
    times.push(0.0);
    dists.push(init.clone());
    let mut t = 0.0;
    for i in 0..steps {
        let step = dt.min(t_end - t);
        let r0 = rates_at(t);
        let rh = rates_at(t + 0.5 * step);
        let r1 = rates_at(t + step);
        master_rhs(&p, r0, epsilon, &mut k1);
        for j in 0..size {
            tmp[j] = p[j] + 0.5 * step * k1[j];
        }
        master_rhs(&tmp, rh, epsilon, &mut k2);
        for j in 0..size {
            tmp[j] = p[j] + 0.5 * step * k2[j];
        }
        master_rhs(&tmp, rh, epsilon, &mut k3);
        for j in 0..size {
            tmp[j] = p[j] + step * k3[j];
        }
        master_rhs(&tmp, r1, epsilon, &mut k4);
        for j in 0..size {
            p[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        t = if i + 1 == steps { t_end } else { t + step };

        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > DistributionOverCounts::NORMALIZATION_TOL {
            return Err(Error::IntegrationFailure {
                time: t,
                reason: format!("normalization drifted to {sum}"),
            });
        }
        for x in &mut p {
            if *x < 0.0 {
                if *x < -DistributionOverCounts::NORMALIZATION_TOL {
                    return Err(Error::IntegrationFailure {
                        time: t,
                        reason: format!("negative probability {x}"),
                    });
                }
                *x = 0.0;
            }
        }
        times.push(t);
        dists.push(DistributionOverCounts { probs: p.clone() });
    }
    Ok(MasterTrajectory { times, dists })
}
