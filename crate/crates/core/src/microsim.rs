//! Event-driven Monte Carlo simulation of the agent population.
//!
//! Every agent owns three independent clocks: task sightings (Poisson, rate
//! `alpha * M0`), robot sightings (Poisson, rate `alpha * (N - 1)` unless
//! overridden) and decision epochs (rate `epsilon`). Pending events of all
//! agents are merged through one priority queue ordered by
//! `(time, agent, kind)`, so a run is a pure function of its seed.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, Color};
use crate::error::{Error, Result};
use crate::history::{HistoryMode, ObservationHistory, Sighting, SightingKind};
use crate::schedule::EnvironmentSchedule;
use crate::series::{uniform_grid, Ensemble, TimeSeries};
use crate::stats::Histogram;
use crate::transition::TransitionFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    TasksOnly,
    TasksAndRobots,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionClock {
    /// Exponential waiting times with rate `epsilon`.
    #[default]
    Exponential,
    /// Every `1 / epsilon` seconds from a random per-agent phase.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub n_agents: usize,
    /// Encounter rate per object, 1/(object * s).
    pub alpha: f64,
    /// Decision rate, 1/s.
    pub epsilon: f64,
    pub history: HistoryMode,
    pub mode: ObservationMode,
    pub transition: TransitionFunction,
    pub t_end: f64,
    pub sample_dt: f64,
    pub initial_red_fraction: f64,
    /// Robot sighting rate override, 1/s. Defaults to `alpha * (N - 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_rate: Option<f64>,
    #[serde(default)]
    pub decision_clock: DecisionClock,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{x} must be positive")))
            }
        };
        if self.n_agents == 0 {
            return Err(Error::invalid("n_agents", "must be at least 1"));
        }
        positive("alpha", self.alpha)?;
        positive("epsilon", self.epsilon)?;
        positive("sample_dt", self.sample_dt)?;
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::invalid(
                "t_end",
                format!("{} must be >= 0", self.t_end),
            ));
        }
        if !(0.0..=1.0).contains(&self.initial_red_fraction) {
            return Err(Error::invalid(
                "initial_red_fraction",
                format!("{} outside [0, 1]", self.initial_red_fraction),
            ));
        }
        if let Some(beta) = self.robot_rate {
            if !(beta.is_finite() && beta >= 0.0) {
                return Err(Error::invalid("robot_rate", format!("{beta} must be >= 0")));
            }
        }
        self.history.validate()?;
        if self.transition.uses_robot_sightings() && self.mode == ObservationMode::TasksOnly {
            return Err(Error::invalid(
                "transition",
                "linear/power rules need robot sightings (mode = tasks_and_robots)",
            ));
        }
        Ok(())
    }

    pub fn initial_red_count(&self) -> usize {
        (self.initial_red_fraction * self.n_agents as f64).round() as usize
    }

    fn robot_sighting_rate(&self) -> f64 {
        match self.mode {
            ObservationMode::TasksOnly => 0.0,
            ObservationMode::TasksAndRobots => self
                .robot_rate
                .unwrap_or(self.alpha * (self.n_agents - 1) as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Task,
    Robot,
    Decision,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    agent: usize,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.agent.cmp(&other.agent))
            .then(self.kind.cmp(&other.kind))
    }
}

struct Run<'a> {
    params: &'a SimParams,
    schedule: &'a EnvironmentSchedule,
    rng: ChaCha8Rng,
    agents: Vec<AgentState>,
    queue: BinaryHeap<Reverse<Event>>,
    red: usize,
    task_clock: Exp<f64>,
    robot_clock: Option<Exp<f64>>,
    decision_clock: Exp<f64>,
}

impl<'a> Run<'a> {
    fn new(params: &'a SimParams, schedule: &'a EnvironmentSchedule, seed: u64) -> Result<Self> {
        let task_rate = params.alpha * f64::from(schedule.total_tasks());
        let beta = params.robot_sighting_rate();
        let exp = |rate: f64| Exp::new(rate).map_err(|e| Error::invalid("rate", e.to_string()));
        let mut run = Run {
            params,
            schedule,
            rng: ChaCha8Rng::seed_from_u64(seed),
            agents: Vec::with_capacity(params.n_agents),
            queue: BinaryHeap::with_capacity(3 * params.n_agents),
            red: params.initial_red_count(),
            task_clock: exp(task_rate)?,
            robot_clock: if beta > 0.0 && params.n_agents > 1 {
                Some(exp(beta)?)
            } else {
                None
            },
            decision_clock: exp(params.epsilon)?,
        };
        for i in 0..params.n_agents {
            let color = if i < run.red {
                Color::Red
            } else {
                Color::Green
            };
            let first_decision = match params.decision_clock {
                DecisionClock::Exponential => run.decision_clock.sample(&mut run.rng),
                DecisionClock::Fixed => run.rng.random::<f64>() / params.epsilon,
            };
            run.agents.push(AgentState::new(
                color,
                ObservationHistory::new(params.history)?,
                first_decision,
            ));
            run.push(first_decision, i, EventKind::Decision);
            let t = run.task_clock.sample(&mut run.rng);
            run.push(t, i, EventKind::Task);
            if let Some(clock) = run.robot_clock {
                let t = clock.sample(&mut run.rng);
                run.push(t, i, EventKind::Robot);
            }
        }
        Ok(run)
    }

    fn push(&mut self, time: f64, agent: usize, kind: EventKind) {
        self.queue.push(Reverse(Event { time, agent, kind }));
    }

    fn handle(&mut self, ev: Event) {
        let Event { time, agent, kind } = ev;
        match kind {
            EventKind::Task => {
                let mu = self.schedule.mu_unchecked(time);
                let color = if self.rng.random::<f64>() < mu {
                    Color::Red
                } else {
                    Color::Green
                };
                self.agents[agent].history.record(Sighting {
                    time,
                    kind: SightingKind::Task,
                    color,
                });
                let next = time + self.task_clock.sample(&mut self.rng);
                self.push(next, agent, kind);
            }
            EventKind::Robot => {
                let n = self.agents.len();
                let mut other = self.rng.random_range(0..n - 1);
                if other >= agent {
                    other += 1;
                }
                let color = self.agents[other].color;
                self.agents[agent].history.record(Sighting {
                    time,
                    kind: SightingKind::Robot,
                    color,
                });
                let clock = self
                    .robot_clock
                    .expect("robot events only scheduled with a clock");
                let next = time + clock.sample(&mut self.rng);
                self.push(next, agent, kind);
            }
            EventKind::Decision => {
                let state = &mut self.agents[agent];
                state.history.advance(time);
                let probs = self.params.transition.evaluate(&state.history.counts());
                let u = self.rng.random::<f64>();
                let switch = match state.color {
                    Color::Green => u < probs.to_red,
                    Color::Red => u < probs.to_green,
                };
                if switch {
                    state.color = state.color.flipped();
                    if state.color.is_red() {
                        self.red += 1;
                    } else {
                        self.red -= 1;
                    }
                }
                let wait = match self.params.decision_clock {
                    DecisionClock::Exponential => self.decision_clock.sample(&mut self.rng),
                    DecisionClock::Fixed => 1.0 / self.params.epsilon,
                };
                state.next_decision_time = time + wait;
                let next = state.next_decision_time;
                self.push(next, agent, kind);
            }
        }
    }

    fn run(mut self) -> Vec<usize> {
        let grid = uniform_grid(self.params.t_end, self.params.sample_dt);
        let mut out = Vec::with_capacity(grid.len());
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.params.t_end {
                break;
            }
            while out.len() < grid.len() && grid[out.len()] < ev.time {
                out.push(self.red);
            }
            self.handle(ev);
        }
        out.resize(grid.len(), self.red);
        out
    }
}

/// Red-agent counts sampled every `sample_dt` for one seeded run.
pub fn simulate_counts(
    params: &SimParams,
    schedule: &EnvironmentSchedule,
    seed: u64,
) -> Result<Vec<usize>> {
    params.validate()?;
    Ok(Run::new(params, schedule, seed)?.run())
}

/// Red-agent fraction sampled every `sample_dt` for one seeded run.
pub fn simulate_run(
    params: &SimParams,
    schedule: &EnvironmentSchedule,
    seed: u64,
) -> Result<TimeSeries> {
    let counts = simulate_counts(params, schedule, seed)?;
    let n = params.n_agents as f64;
    Ok(TimeSeries {
        times: uniform_grid(params.t_end, params.sample_dt),
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Seed for run `index` of an ensemble: SplitMix64 applied to the master
/// seed offset by the golden-ratio increment times `index + 1`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `runs` independent simulations in parallel and aggregates them in run
/// order, so the result does not depend on thread scheduling.
pub fn ensemble(
    params: &SimParams,
    schedule: &EnvironmentSchedule,
    master_seed: u64,
    runs: usize,
) -> Result<Ensemble> {
    if runs == 0 {
        return Err(Error::invalid("runs", "must be at least 1"));
    }
    params.validate()?;
    let series: Vec<TimeSeries> = (0..runs)
        .into_par_iter()
        .map(|i| {
            simulate_run(params, schedule, derive_seed(master_seed, i as u64)).map_err(|e| {
                Error::Run {
                    run: i,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<_>>()?;
    let times = series[0].times.clone();
    Ensemble::from_runs(times, series.into_iter().map(|s| s.values).collect())
}

/// Pools every sample with `from <= t <= to` across runs into red-count
/// occurrences.
pub fn histogram_window(
    runs: &[TimeSeries],
    n_agents: usize,
    from: f64,
    to: f64,
) -> Result<Histogram> {
    let mut hist = Histogram::new(n_agents);
    for run in runs {
        for (_, v) in run.window(from, to) {
            let n = (v * n_agents as f64).round();
            if !(0.0..=n_agents as f64).contains(&n) {
                return Err(Error::invalid(
                    "series",
                    format!("value {v} is not a fraction"),
                ));
            }
            hist.add(n as usize);
        }
    }
    if hist.total() == 0 {
        return Err(Error::EmptyPool);
    }
    Ok(hist)
}

/// Histogram of all samples from `t_start` onward.
pub fn steady_state_histogram(
    runs: &[TimeSeries],
    n_agents: usize,
    t_start: f64,
) -> Result<Histogram> {
    histogram_window(runs, n_agents, t_start, f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(h: f64) -> SimParams {
        SimParams {
            n_agents: 20,
            alpha: 2.1 / 50.0,
            epsilon: 0.1,
            history: HistoryMode::TimeWindow { length: h },
            mode: ObservationMode::TasksOnly,
            transition: TransitionFunction::Ratio,
            t_end: 300.0,
            sample_dt: 1.0,
            initial_red_fraction: 0.0,
            robot_rate: None,
            decision_clock: DecisionClock::Exponential,
        }
    }

    #[test]
    fn all_red_environment_turns_everyone_red() {
        let s = EnvironmentSchedule::constant(50, 1.0).unwrap();
        for h in [0.5, 10.0, 50.0] {
            let run = simulate_run(&params(h), &s, 7).unwrap();
            assert_eq!(run.last_value(), Some(1.0), "h={h}");
            assert_eq!(run.values[0], 0.0);
        }
    }

    #[test]
    fn counts_move_by_at_most_one_between_events_and_stay_in_range() {
        let s = EnvironmentSchedule::from_steps(50, &[(0.0, 0.3), (100.0, 0.8)]).unwrap();
        let mut p = params(10.0);
        p.sample_dt = 0.01;
        p.initial_red_fraction = 0.5;
        let counts = simulate_counts(&p, &s, 3).unwrap();
        assert!(counts.iter().all(|&c| c <= 20));
        // At a 10 ms grid almost every step covers at most one switch.
        let big_jumps = counts
            .windows(2)
            .filter(|w| w[0].abs_diff(w[1]) > 1)
            .count();
        assert!(big_jumps < 5, "{big_jumps}");
    }

    #[test]
    fn same_seed_same_output() {
        let s = EnvironmentSchedule::constant(50, 0.4).unwrap();
        let mut p = params(10.0);
        p.mode = ObservationMode::TasksAndRobots;
        p.transition = TransitionFunction::Power;
        let a = simulate_run(&p, &s, 11).unwrap();
        let b = simulate_run(&p, &s, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_run(&p, &s, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_history_never_switches() {
        // A vanishing encounter rate leaves every history empty.
        let s = EnvironmentSchedule::constant(1, 1.0).unwrap();
        let mut p = params(1.0);
        p.alpha = 1e-12;
        p.initial_red_fraction = 0.35;
        let run = simulate_run(&p, &s, 5).unwrap();
        assert!(run.values.iter().all(|&v| v == 0.35));
    }

    #[test]
    fn single_run_ensemble_is_the_run() {
        let s = EnvironmentSchedule::constant(50, 0.5).unwrap();
        let p = params(10.0);
        let e = ensemble(&p, &s, 99, 1).unwrap();
        let run = simulate_run(&p, &s, derive_seed(99, 0)).unwrap();
        assert_eq!(e.mean, run.values);
        assert!(e.std.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ensemble_is_reproducible() {
        let s = EnvironmentSchedule::constant(50, 0.5).unwrap();
        let p = params(10.0);
        let a = ensemble(&p, &s, 42, 8).unwrap();
        let b = ensemble(&p, &s, 42, 8).unwrap();
        assert_eq!(a, b);
        assert!(ensemble(&p, &s, 42, 0).is_err());
    }

    #[test]
    fn ensemble_mean_is_unbiased() {
        let s = EnvironmentSchedule::constant(50, 0.5).unwrap();
        let mut p = params(10.0);
        p.initial_red_fraction = 0.5;
        p.t_end = 200.0;
        let runs = 100;
        let e = ensemble(&p, &s, 2024, runs).unwrap();
        // Average over the last 100 s to sharpen, but still bound by the
        // single-time standard error.
        let tail: Vec<f64> = e.mean[100..].to_vec();
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        let se = (0.25 / (20.0 * runs as f64)).sqrt();
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn steady_variance_is_binomial() {
        let s = EnvironmentSchedule::constant(50, 0.3).unwrap();
        let mut p = params(10.0);
        p.initial_red_fraction = 0.3;
        p.t_end = 20_000.0;
        p.sample_dt = 20.0;
        let run = simulate_run(&p, &s, 77).unwrap();
        let h = steady_state_histogram(&[run], 20, 200.0).unwrap();
        let g = h.mean_fraction();
        let expected = 20.0 * g * (1.0 - g);
        assert!(
            (h.count_variance() / expected - 1.0).abs() < 0.15,
            "{} vs {expected}",
            h.count_variance()
        );
    }

    #[test]
    fn fixed_clock_and_count_window_run() {
        let s = EnvironmentSchedule::constant(50, 0.7).unwrap();
        let mut p = params(10.0);
        p.history = HistoryMode::CountWindow { length: 10 };
        p.decision_clock = DecisionClock::Fixed;
        p.mode = ObservationMode::TasksAndRobots;
        p.transition = TransitionFunction::Linear;
        p.initial_red_fraction = 1.0;
        p.t_end = 2000.0;
        let e = ensemble(&p, &s, 1, 20).unwrap();
        let tail = &e.mean[1000..];
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((m - 0.7).abs() < 0.05, "mean {m}");
    }

    #[test]
    fn histogram_point_mass_and_errors() {
        let run = TimeSeries::sample(10.0, 1.0, |_| 0.5);
        let h = steady_state_histogram(std::slice::from_ref(&run), 20, 0.0).unwrap();
        assert_eq!(h.counts[10], 11);
        assert_eq!(h.total(), 11);
        assert!(matches!(
            steady_state_histogram(&[run], 20, 11.0),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn validation_errors() {
        let mut p = params(10.0);
        p.transition = TransitionFunction::Linear;
        assert!(p.validate().is_err());
        let mut p = params(10.0);
        p.n_agents = 0;
        assert!(p.validate().is_err());
        let mut p = params(10.0);
        p.sample_dt = 0.0;
        assert!(p.validate().is_err());
        let mut p = params(10.0);
        p.initial_red_fraction = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn seeds_differ_per_run() {
        let seeds: std::collections::HashSet<_> = (0..1000).map(|i| derive_seed(5, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(5, 0), derive_seed(6, 0));
    }
}
