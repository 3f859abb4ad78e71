//! Mean-field dynamics for agents that observe both tasks and robots.
//!
//! The averaged red fraction obeys
//! `dp/dt = eps * ((1 - p) * f_to_red(m, n) - p * f_to_green(m, n))`
//! where `m` and `n` are the window means of the red-task fraction and of `p`
//! itself over the trailing window `[t - h, t]`. Because `n` looks back over
//! the window, the equation is a delay integro-differential equation.
//!
//! All times here are model time units; callers rescale schedules and
//! outputs.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::microsim::derive_seed;
use crate::schedule::EnvironmentSchedule;
use crate::series::{Ensemble, TimeSeries};
use crate::transition::{full_unchecked, GFamily};

/// Slack allowed on `p` before an excursion outside `[0, 1]` is an error.
pub const FRACTION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub family: GFamily,
    pub epsilon: f64,
    /// Window length.
    pub h: f64,
    /// Red fraction for all `t <= 0`.
    pub p0: f64,
}

impl DelayModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("{} must be positive", self.epsilon),
            ));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid("h", format!("{} must be positive", self.h)));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::invalid("p0", format!("{} outside [0, 1]", self.p0)));
        }
        Ok(())
    }

    /// Largest step accepted by [`integrate_delay_ode`].
    pub fn max_dt(&self) -> f64 {
        (self.h / 20.0).min(0.1 / self.epsilon)
    }

    fn rate(&self, p: f64, m: f64, n: f64) -> f64 {
        let f = full_unchecked(m, n.clamp(0.0, 1.0), self.family);
        self.epsilon * ((1.0 - p) * f.to_red - p * f.to_green)
    }
}

/// Trailing history of `p` on a uniform grid, with prefix integrals for
/// trapezoidal window averages.
#[derive(Debug, Clone)]
pub struct DelayState {
    dt: f64,
    h: f64,
    p0: f64,
    /// Grid index of `buf[0]`.
    front: usize,
    /// `(p(t_j), integral of p over [0, t_j])`.
    buf: VecDeque<(f64, f64)>,
}

impl DelayState {
    pub fn new(dt: f64, h: f64, p0: f64) -> Self {
        Self {
            dt,
            h,
            p0,
            front: 0,
            buf: VecDeque::from([(p0, 0.0)]),
        }
    }

    /// Index of the latest grid point.
    pub fn index(&self) -> usize {
        self.front + self.buf.len() - 1
    }

    pub fn current(&self) -> f64 {
        self.buf.back().expect("state is never empty").0
    }

    fn cumulative(&self) -> f64 {
        self.buf.back().expect("state is never empty").1
    }

    /// Integral of `p` over `[0, s]` for `s` at or before the latest grid
    /// point; `p = p0` before zero.
    fn integral_to(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.p0 * s;
        }
        let j = ((s / self.dt).floor() as usize).clamp(self.front, self.index());
        let (pj, cj) = self.buf[j - self.front];
        let frac = s - j as f64 * self.dt;
        if frac <= 0.0 || j == self.index() {
            return cj + frac * pj;
        }
        let pk = self.buf[j + 1 - self.front].0;
        let ps = pj + (pk - pj) * frac / self.dt;
        cj + frac * 0.5 * (pj + ps)
    }

    /// Window mean of `p` over `[t - h, t]` where `t` is one step past the
    /// latest grid point and `p(t) = next`.
    fn window_mean_ahead(&self, next: f64) -> f64 {
        let t = (self.index() + 1) as f64 * self.dt;
        let cum = self.cumulative() + 0.5 * self.dt * (self.current() + next);
        (cum - self.integral_to(t - self.h)) / self.h
    }

    /// Window mean of `p` ending at the latest grid point.
    pub fn window_mean(&self) -> f64 {
        let t = self.index() as f64 * self.dt;
        (self.cumulative() - self.integral_to(t - self.h)) / self.h
    }

    fn push(&mut self, next: f64) {
        let cum = self.cumulative() + 0.5 * self.dt * (self.current() + next);
        self.buf.push_back((next, cum));
        let t = self.index() as f64 * self.dt;
        let keep_from = ((t - self.h) / self.dt).floor() - 1.0;
        while keep_from > self.front as f64 && self.buf.len() > 2 {
            self.buf.pop_front();
            self.front += 1;
        }
    }
}

fn check_fraction(p: f64, time: f64) -> Result<f64> {
    if !p.is_finite() || !(-FRACTION_SLACK..=1.0 + FRACTION_SLACK).contains(&p) {
        return Err(Error::IntegrationFailure {
            time,
            reason: format!("fraction {p} left [0, 1]"),
        });
    }
    Ok(p.clamp(0.0, 1.0))
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::invalid("t_end", format!("{t_end} must be >= 0")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("{dt} must be positive")));
    }
    Ok((t_end / dt - 1e-9).ceil().max(0.0) as usize)
}

/// Fixed-step Heun integration of the delayed mean-field equation.
///
/// The robot window mean uses the trapezoidal rule over the stored
/// trajectory; the task window mean is the exact schedule average.
pub fn integrate_delay_ode(
    schedule: &EnvironmentSchedule,
    model: &DelayModel,
    t_end: f64,
    dt: f64,
) -> Result<TimeSeries> {
    model.validate()?;
    let steps = step_count(t_end, dt)?;
    if dt > model.max_dt() * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "dt",
            format!("{dt} exceeds min(h/20, 0.1/epsilon) = {}", model.max_dt()),
        ));
    }
    let mut state = DelayState::new(dt, model.h, model.p0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(model.p0);
    for i in 0..steps {
        let t = i as f64 * dt;
        let t1 = t + dt;
        let p = state.current();
        let k1 = model.rate(p, schedule.window_mean(t, model.h), state.window_mean());
        let guess = p + dt * k1;
        let m1 = schedule.window_mean(t1, model.h);
        let k2 = model.rate(guess, m1, state.window_mean_ahead(guess));
        let next = check_fraction(p + 0.5 * dt * (k1 + k2), t1)?;
        state.push(next);
        times.push(t1);
        values.push(next);
    }
    Ok(TimeSeries { times, values })
}

/// Population-level iteration with binomially sampled switch counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhenomenologicalModel {
    pub delay: DelayModel,
    pub n_agents: usize,
    pub dt: f64,
}

/// One seeded trajectory of `N_r / N`.
///
/// Each step draws `dN_up ~ Bin(N - N_r, eps dt f_to_red)` and
/// `dN_down ~ Bin(N_r, eps dt f_to_green)`. The robot estimate is the mean of
/// the last `round(h / dt)` stored counts, the task estimate the exact
/// schedule window mean.
pub fn iterate_phenomenological(
    schedule: &EnvironmentSchedule,
    model: &PhenomenologicalModel,
    seed: u64,
    t_end: f64,
) -> Result<TimeSeries> {
    let delay = &model.delay;
    delay.validate()?;
    if model.n_agents == 0 {
        return Err(Error::invalid("n_agents", "must be at least 1"));
    }
    let dt = model.dt;
    let steps = step_count(t_end, dt)?;
    let n = model.n_agents as u64;
    let nf = n as f64;
    let slots = ((delay.h / dt).round() as usize).max(1);
    let mut red = (delay.p0 * nf).round() as u64;
    let mut ring: VecDeque<u64> = std::iter::repeat_n(red, slots).collect();
    let mut ring_sum: u64 = red * slots as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    times.push(0.0);
    values.push(red as f64 / nf);
    for i in 0..steps {
        let t = i as f64 * dt;
        let n_hat = ring_sum as f64 / (slots as f64 * nf);
        let m_hat = schedule.window_mean(t, delay.h);
        let f = full_unchecked(m_hat, n_hat.clamp(0.0, 1.0), delay.family);
        let p_up = delay.epsilon * dt * f.to_red;
        let p_down = delay.epsilon * dt * f.to_green;
        let draw = |trials: u64, p: f64, rng: &mut ChaCha8Rng| -> Result<u64> {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    "switch probability",
                    format!("eps*dt*f = {p} outside [0, 1] at t={t}"),
                ));
            }
            if trials == 0 || p == 0.0 {
                return Ok(0);
            }
            Ok(Binomial::new(trials, p)
                .map_err(|e| Error::invalid("switch probability", e.to_string()))?
                .sample(rng))
        };
        let up = draw(n - red, p_up, &mut rng)?;
        let down = draw(red, p_down, &mut rng)?;
        red = red + up - down;
        ring_sum += red;
        ring.push_back(red);
        ring_sum -= ring.pop_front().expect("ring holds at least one slot");
        times.push((i + 1) as f64 * dt);
        values.push(red as f64 / nf);
    }
    Ok(TimeSeries { times, values })
}

/// Independent seeded trajectories aggregated in run order.
pub fn phenomenological_ensemble(
    schedule: &EnvironmentSchedule,
    model: &PhenomenologicalModel,
    master_seed: u64,
    runs: usize,
    t_end: f64,
) -> Result<Ensemble> {
    if runs == 0 {
        return Err(Error::invalid("runs", "must be at least 1"));
    }
    let series: Vec<TimeSeries> = (0..runs)
        .into_par_iter()
        .map(|i| {
            iterate_phenomenological(schedule, model, derive_seed(master_seed, i as u64), t_end)
                .map_err(|e| Error::Run {
                    run: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let times = series[0].times.clone();
    Ensemble::from_runs(times, series.into_iter().map(|s| s.values).collect())
}

/// Net switching flux at a candidate steady state `p` for constant task
/// fraction `mu0`: positive means `p` would grow.
pub fn steady_state_residual(mu0: f64, p: f64, family: GFamily) -> f64 {
    (1.0 - p) * mu0 * family.eval_unchecked(mu0 - p)
        - p * (1.0 - mu0) * family.eval_unchecked(p - mu0)
}

/// Roots of [`steady_state_residual`] found by scanning `p` over `[0, 1]`
/// with step `grid`. Each sign change, or run of exact zeros between
/// opposite signs, counts once.
pub fn steady_state_roots(mu0: f64, family: GFamily, grid: f64) -> Vec<f64> {
    let n = (1.0 / grid).round() as usize;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let p = i as f64 / n as f64;
            (p, steady_state_residual(mu0, p, family))
        })
        .collect();
    let mut roots = Vec::new();
    let mut last_nonzero: Option<(f64, f64)> = None;
    let mut zero_run: Option<(f64, f64)> = None;
    for &(p, r) in &pts {
        if r == 0.0 {
            zero_run = Some(zero_run.map_or((p, p), |(a, _)| (a, p)));
            continue;
        }
        match (last_nonzero, zero_run.take()) {
            (Some((_, prev)), Some((a, b))) if prev.signum() != r.signum() => {
                roots.push(0.5 * (a + b));
            }
            (Some((q, prev)), None) if prev.signum() != r.signum() => {
                roots.push(q - prev * (p - q) / (r - prev));
            }
            (None, Some((a, b))) => roots.push(0.5 * (a + b)),
            _ => {}
        }
        last_nonzero = Some((p, r));
    }
    if let Some((a, b)) = zero_run {
        roots.push(0.5 * (a + b));
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_schedule() -> EnvironmentSchedule {
        EnvironmentSchedule::from_steps(50, &[(0.0, 0.3), (50.0, 0.8), (200.0, 0.5)]).unwrap()
    }

    fn model(family: GFamily, h: f64, p0: f64) -> DelayModel {
        DelayModel {
            family,
            epsilon: 1.0,
            h,
            p0,
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        for family in [GFamily::Linear, GFamily::Power] {
            let s = EnvironmentSchedule::constant(50, 0.35).unwrap();
            let out = integrate_delay_ode(&s, &model(family, 4.0, 0.35), 100.0, 0.05).unwrap();
            assert!(out.values.iter().all(|&p| (p - 0.35).abs() < 1e-12));
        }
    }

    #[test]
    fn window_mean_of_linear_ramp_is_exact() {
        // p(t) = t on the grid; trapezoid is exact for piecewise linear data.
        let mut st = DelayState::new(0.1, 2.0, 0.0);
        for i in 1..=100 {
            st.push(i as f64 * 0.1);
        }
        // Mean of t over [8, 10].
        assert!((st.window_mean() - 9.0).abs() < 1e-9);
        // Window reaching before zero reads p0 = 0 there.
        let mut st = DelayState::new(0.1, 2.0, 0.5);
        for _ in 0..10 {
            st.push(1.0);
        }
        // [−1, 1]: 1 s at 0.5, then a ramp 0.5 -> 1 over 0.1 s, then 1.
        let expected = (0.5 + 0.1 * 0.75 + 0.9) / 2.0;
        assert!((st.window_mean() - expected).abs() < 1e-12);
    }

    #[test]
    fn converges_with_richardson_reference() {
        let s = EnvironmentSchedule::constant(50, 0.5).unwrap();
        let m = DelayModel {
            family: GFamily::Linear,
            epsilon: 0.1,
            h: 2.0,
            p0: 1.0,
        };
        let coarse = integrate_delay_ode(&s, &m, 400.0, 0.1).unwrap();
        let fine = integrate_delay_ode(&s, &m, 400.0, 0.01).unwrap();
        let gap = coarse
            .times
            .iter()
            .zip(&coarse.values)
            .map(|(&t, &v)| (v - fine.interpolate(t).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-4, "dt vs dt/10 gap {gap}");
        assert!((coarse.last_value().unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn halving_dt_changes_little() {
        let s = step_schedule();
        let m = model(GFamily::Linear, 8.0, 1.0);
        let a = integrate_delay_ode(&s, &m, 300.0, 0.1).unwrap();
        let b = integrate_delay_ode(&s, &m, 300.0, 0.05).unwrap();
        let c = integrate_delay_ode(&s, &m, 300.0, 0.025).unwrap();
        let gap = |x: &TimeSeries, y: &TimeSeries| {
            x.times
                .iter()
                .zip(&x.values)
                .map(|(&t, &v)| (v - y.interpolate(t).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let (g1, g2) = (gap(&a, &b), gap(&b, &c));
        assert!(g1 < 0.1 * 0.1 && g2 < g1, "gaps {g1} {g2}");
    }

    #[test]
    fn rejects_large_step() {
        let s = step_schedule();
        assert!(integrate_delay_ode(&s, &model(GFamily::Power, 2.0, 1.0), 10.0, 0.2).is_err());
        assert!(integrate_delay_ode(&s, &model(GFamily::Power, 2.0, 1.0), 10.0, 0.1).is_ok());
    }

    #[test]
    fn phenomenological_is_deterministic_and_bounded() {
        let s = step_schedule();
        let pm = PhenomenologicalModel {
            delay: model(GFamily::Linear, 8.0, 1.0),
            n_agents: 20,
            dt: 1.0,
        };
        let a = iterate_phenomenological(&s, &pm, 9, 300.0).unwrap();
        let b = iterate_phenomenological(&s, &pm, 9, 300.0).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.values[0], 1.0);
    }

    #[test]
    fn no_switching_keeps_count() {
        // Linear g with m = n everywhere gives f = 0.
        let s = EnvironmentSchedule::constant(50, 0.4).unwrap();
        let pm = PhenomenologicalModel {
            delay: model(GFamily::Linear, 4.0, 0.4),
            n_agents: 20,
            dt: 0.5,
        };
        let run = iterate_phenomenological(&s, &pm, 1, 100.0).unwrap();
        assert!(run.values.iter().all(|&v| v == 0.4));
    }

    #[test]
    fn oversized_probability_rejected() {
        let s = step_schedule();
        let pm = PhenomenologicalModel {
            delay: DelayModel {
                family: GFamily::Linear,
                epsilon: 1.0,
                h: 8.0,
                p0: 1.0,
            },
            n_agents: 20,
            dt: 5.0,
        };
        assert!(iterate_phenomenological(&s, &pm, 1, 100.0).is_err());
    }

    #[test]
    fn residual_examples() {
        for family in [GFamily::Linear, GFamily::Power] {
            assert_eq!(steady_state_residual(0.7, 0.7, family), 0.0);
            for mu in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9] {
                let roots = steady_state_roots(mu, family, 1e-3);
                assert_eq!(roots.len(), 1, "mu={mu} {family:?}: {roots:?}");
                assert!((roots[0] - mu).abs() < 1e-3, "{roots:?}");
            }
        }
    }
}
