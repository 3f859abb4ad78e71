//! Quantitative comparison of two trajectories.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::EnvironmentSchedule;
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceOptions {
    /// Half-width of the acceptance band around the target.
    pub band: f64,
    /// How long the series must stay inside the band, seconds.
    pub dwell: f64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            band: 0.05,
            dwell: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentConvergence {
    pub segment: usize,
    pub start: f64,
    pub target: f64,
    /// Seconds after the segment start, `None` if never converged.
    pub time_a: Option<f64>,
    pub time_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rmse: f64,
    pub max_abs_gap: f64,
    /// Time of the largest gap.
    pub max_gap_time: f64,
    pub points: usize,
    pub convergence: Vec<SegmentConvergence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_chi_square: Option<f64>,
}

/// First time after `start` at which `series` enters the band
/// `target +- band` and stays there for `dwell` seconds, measured from
/// `start`. The dwell must complete before `end` and before the series ends.
pub fn convergence_time(
    series: &TimeSeries,
    start: f64,
    end: f64,
    target: f64,
    opts: ConvergenceOptions,
) -> Option<f64> {
    let stop = end.min(series.end()?);
    let mut entered: Option<f64> = None;
    for (t, v) in series.window(start, stop) {
        if (v - target).abs() <= opts.band {
            let t0 = *entered.get_or_insert(t);
            if t - t0 >= opts.dwell {
                return Some(t0 - start);
            }
        } else {
            entered = None;
        }
    }
    None
}

/// Largest excursion of `series` past `target` in the direction of travel
/// (`rising` = approaching from below) within `[start, end)`; zero if it
/// never crosses.
pub fn max_overshoot(series: &TimeSeries, start: f64, end: f64, target: f64, rising: bool) -> f64 {
    series
        .window(start, end)
        .filter(|&(t, _)| t < end)
        .map(|(_, v)| if rising { v - target } else { target - v })
        .fold(0.0, f64::max)
}

/// Gap statistics of `b` against `a` on `a`'s grid inside the common time
/// range, plus per-segment convergence times when a schedule is supplied.
pub fn compare_series(
    a: &TimeSeries,
    b: &TimeSeries,
    schedule: Option<&EnvironmentSchedule>,
    opts: ConvergenceOptions,
) -> Result<ComparisonReport> {
    let (Some(a0), Some(a1), Some(b0), Some(b1)) = (a.start(), a.end(), b.start(), b.end()) else {
        return Err(Error::DisjointRanges);
    };
    let (lo, hi) = (a0.max(b0), a1.min(b1));
    if lo > hi {
        return Err(Error::DisjointRanges);
    }
    let mut sq = 0.0;
    let mut max_abs_gap = 0.0;
    let mut max_gap_time = lo;
    let mut points = 0usize;
    for (t, va) in a.window(lo, hi) {
        let vb = b.interpolate(t).ok_or(Error::DisjointRanges)?;
        let gap = (va - vb).abs();
        sq += gap * gap;
        if gap > max_abs_gap {
            max_abs_gap = gap;
            max_gap_time = t;
        }
        points += 1;
    }
    if points == 0 {
        return Err(Error::DisjointRanges);
    }
    let convergence = schedule
        .map(|s| {
            s.segments()
                .iter()
                .enumerate()
                .map(|(i, seg)| {
                    let end = s.segment_end(i);
                    SegmentConvergence {
                        segment: i,
                        start: seg.start,
                        target: seg.mu_r,
                        time_a: convergence_time(a, seg.start, end, seg.mu_r, opts),
                        time_b: convergence_time(b, seg.start, end, seg.mu_r, opts),
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(ComparisonReport {
        rmse: (sq / points as f64).sqrt(),
        max_abs_gap,
        max_gap_time,
        points,
        convergence,
        histogram_chi_square: None,
    })
}
