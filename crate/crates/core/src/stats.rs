//! Count histograms and chi-square goodness of fit.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Occurrence counts of red-agent numbers `0..=n_agents`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(n_agents: usize) -> Self {
        Self {
            counts: vec![0; n_agents + 1],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn add(&mut self, n_red: usize) {
        self.counts[n_red] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Mean red fraction over the pooled samples.
    pub fn mean_fraction(&self) -> f64 {
        let total = self.total() as f64;
        let sum: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(n, &c)| n as f64 * c as f64)
            .sum();
        sum / total / self.n_agents() as f64
    }

    /// Sample variance of the red count.
    pub fn count_variance(&self) -> f64 {
        let total = self.total() as f64;
        let mean = self.mean_fraction() * self.n_agents() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(n, &c)| c as f64 * (n as f64 - mean).powi(2))
            .sum::<f64>()
            / total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub critical_95: f64,
    pub bins: usize,
}

impl ChiSquareTest {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_95
    }
}

/// Pearson chi-square of `observed` against `expected_probs`, merging
/// adjacent cells until each expected count is at least 5.
/// `fitted_params` is the number of parameters estimated from the data.
pub fn chi_square(
    observed: &[u64],
    expected_probs: &[f64],
    fitted_params: usize,
) -> Result<ChiSquareTest> {
    if observed.len() != expected_probs.len() {
        return Err(Error::invalid(
            "expected_probs",
            "length differs from observed",
        ));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(Error::EmptyPool);
    }
    let total = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected_probs) {
        obs += o as f64;
        exp += p * total;
        if exp >= 5.0 {
            cells.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => cells.push((obs, exp)),
        }
    }
    let bins = cells.len();
    if bins < fitted_params + 2 {
        return Err(Error::invalid(
            "histogram",
            format!("only {bins} cells after pooling; not enough for a chi-square test"),
        ));
    }
    let dof = bins - 1 - fitted_params;
    let statistic = cells.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let critical_95 = ChiSquared::new(dof as f64)
        .map_err(|e| Error::invalid("dof", e.to_string()))?
        .inverse_cdf(0.95);
    Ok(ChiSquareTest {
        statistic,
        dof,
        critical_95,
        bins,
    })
}
