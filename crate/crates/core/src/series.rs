//! Sampled trajectories of the red-agent fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::invalid(
                "series",
                format!("{} times but {} values", times.len(), values.len()),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "series",
                "times must be strictly increasing",
            ));
        }
        Ok(Self { times, values })
    }

    /// Evaluates `f` on the grid `0, dt, 2dt, ..` up to and including `t_end`.
    pub fn sample(t_end: f64, dt: f64, mut f: impl FnMut(f64) -> f64) -> Self {
        let times = uniform_grid(t_end, dt);
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn last_value(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let (first, last) = (self.start()?, self.end()?);
        // Grid points built by repeated addition may overshoot by an ulp.
        let slack = 1e-9 * (1.0 + t.abs());
        if t < first - slack || t > last + slack {
            return None;
        }
        let t = t.clamp(first, last);
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return Some(self.values[0]);
        }
        if i == self.len() {
            return Some(self.values[i - 1]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
    }

    /// Values on a new grid, restricted to points inside this series' range.
    pub fn resample(&self, grid: &[f64]) -> TimeSeries {
        let (times, values) = grid
            .iter()
            .filter_map(|&t| self.interpolate(t).map(|v| (t, v)))
            .unzip();
        TimeSeries { times, values }
    }

    /// Samples with `t` in `[from, to]`.
    pub fn window(&self, from: f64, to: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .filter(move |&(t, _)| t >= from && t <= to)
    }
}

/// Pointwise statistics over independent runs sharing one time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub runs: Vec<Vec<f64>>,
}

impl Ensemble {
    /// Aggregates runs in index order. All runs must share `times`.
    pub fn from_runs(times: Vec<f64>, runs: Vec<Vec<f64>>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("runs", "at least one run required"));
        }
        if let Some(bad) = runs.iter().position(|r| r.len() != times.len()) {
            return Err(Error::invalid(
                "runs",
                format!("run {bad} has a different length from the time grid"),
            ));
        }
        let n = runs.len() as f64;
        let mut mean = vec![0.0; times.len()];
        for run in &runs {
            for (m, v) in mean.iter_mut().zip(run) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; times.len()];
        for run in &runs {
            for ((s, v), m) in var.iter_mut().zip(run).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self {
            times,
            mean,
            std,
            runs,
        })
    }

    pub fn mean_series(&self) -> TimeSeries {
        TimeSeries {
            times: self.times.clone(),
            values: self.mean.clone(),
        }
    }

    pub fn run_series(&self, i: usize) -> Option<TimeSeries> {
        self.runs.get(i).map(|values| TimeSeries {
            times: self.times.clone(),
            values: values.clone(),
        })
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }
}

pub fn uniform_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let steps = (t_end / dt + 1e-9).floor() as usize;
    (0..=steps).map(|k| k as f64 * dt).collect()
}
