//! Piecewise-constant task environment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One constant stretch of the environment, active from `start` until the
/// next segment begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub mu_r: f64,
}

/// Fraction of red tasks as a right-continuous step function of time, with a
/// constant total task count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct EnvironmentSchedule {
    total_tasks: u32,
    segments: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    total_tasks: u32,
    segments: Vec<Segment>,
}

impl TryFrom<RawSchedule> for EnvironmentSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        EnvironmentSchedule::new(raw.total_tasks, raw.segments)
    }
}

impl From<EnvironmentSchedule> for RawSchedule {
    fn from(s: EnvironmentSchedule) -> Self {
        RawSchedule {
            total_tasks: s.total_tasks,
            segments: s.segments,
        }
    }
}

impl EnvironmentSchedule {
    pub fn new(total_tasks: u32, segments: Vec<Segment>) -> Result<Self> {
        if total_tasks == 0 {
            return Err(Error::invalid("total_tasks", "must be positive"));
        }
        let first = segments
            .first()
            .ok_or_else(|| Error::invalid("segments", "at least one segment required"))?;
        if first.start != 0.0 {
            return Err(Error::invalid(
                "segments",
                "first segment must start at t=0",
            ));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !(0.0..=1.0).contains(&seg.mu_r) {
                return Err(Error::invalid(
                    "segments",
                    format!("segment {i}: mu_r={} outside [0,1]", seg.mu_r),
                ));
            }
            if !seg.start.is_finite() {
                return Err(Error::invalid(
                    "segments",
                    format!("segment {i}: non-finite start"),
                ));
            }
        }
        if segments.windows(2).any(|w| w[1].start <= w[0].start) {
            return Err(Error::invalid(
                "segments",
                "start times must be strictly increasing",
            ));
        }
        Ok(Self {
            total_tasks,
            segments,
        })
    }

    pub fn constant(total_tasks: u32, mu_r: f64) -> Result<Self> {
        Self::new(total_tasks, vec![Segment { start: 0.0, mu_r }])
    }

    /// Builds a schedule from `(start, mu_r)` pairs.
    pub fn from_steps(total_tasks: u32, steps: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            total_tasks,
            steps
                .iter()
                .map(|&(start, mu_r)| Segment { start, mu_r })
                .collect(),
        )
    }

    pub fn total_tasks(&self) -> u32 {
        self.total_tasks
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// End of segment `i`, or infinity for the last one.
    pub fn segment_end(&self, i: usize) -> f64 {
        self.segments.get(i + 1).map_or(f64::INFINITY, |s| s.start)
    }

    fn index_at(&self, t: f64) -> usize {
        // Right-continuous: a segment is active from its own start time.
        self.segments.partition_point(|s| s.start <= t).max(1) - 1
    }

    /// Red-task fraction active at `t`.
    pub fn mu_at(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::invalid("t", format!("{t} must be >= 0")));
        }
        Ok(self.mu_unchecked(t))
    }

    /// Lookup without the sign check; times before zero read the first
    /// segment.
    pub(crate) fn mu_unchecked(&self, t: f64) -> f64 {
        self.segments[self.index_at(t)].mu_r
    }

    /// The same schedule with every breakpoint divided by `factor`, e.g. to
    /// convert seconds to model time units.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(
                "time_scale",
                format!("{factor} must be positive"),
            ));
        }
        Self::new(
            self.total_tasks,
            self.segments
                .iter()
                .map(|s| Segment {
                    start: s.start / factor,
                    mu_r: s.mu_r,
                })
                .collect(),
        )
    }

    /// Exact integral of `mu_r` over `[a, b]`. The first segment is extended
    /// to negative times.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let lo = if i == 0 { f64::NEG_INFINITY } else { seg.start };
            let hi = self.segment_end(i);
            let lo = lo.max(a);
            let hi = hi.min(b);
            if hi > lo {
                total += seg.mu_r * (hi - lo);
            }
        }
        total
    }

    /// Average of `mu_r` over the window `[t - h, t]`.
    pub fn window_mean(&self, t: f64, h: f64) -> f64 {
        if h <= 0.0 {
            return self.mu_unchecked(t);
        }
        (self.integral(t - h, t) / h).clamp(0.0, 1.0)
    }
}
