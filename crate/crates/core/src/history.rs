//! Sliding windows of task and robot sightings.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::agent::Color;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryMode {
    /// Keep every sighting made during the last `length` seconds.
    TimeWindow { length: f64 },
    /// Keep the last `length` task sightings and, separately, the last
    /// `length` robot sightings.
    CountWindow { length: usize },
}

impl HistoryMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HistoryMode::TimeWindow { length } if !(length.is_finite() && length > 0.0) => {
                Err(Error::invalid(
                    "history.length",
                    format!("{length} must be a positive duration"),
                ))
            }
            HistoryMode::CountWindow { length: 0 } => Err(Error::invalid(
                "history.length",
                "capacity must be at least 1",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SightingKind {
    Task,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sighting {
    pub time: f64,
    pub kind: SightingKind,
    pub color: Color,
}

/// Red/green tallies over the retained sightings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tasks_red: u32,
    pub tasks_green: u32,
    pub robots_red: u32,
    pub robots_green: u32,
}

impl Counts {
    pub fn tasks(&self) -> u32 {
        self.tasks_red + self.tasks_green
    }

    pub fn robots(&self) -> u32 {
        self.robots_red + self.robots_green
    }

    /// Observed red-task fraction, `None` for an empty task history.
    pub fn task_fraction(&self) -> Option<f64> {
        (self.tasks() > 0).then(|| f64::from(self.tasks_red) / f64::from(self.tasks()))
    }

    pub fn robot_fraction(&self) -> Option<f64> {
        (self.robots() > 0).then(|| f64::from(self.robots_red) / f64::from(self.robots()))
    }

    fn bump(&mut self, kind: SightingKind, color: Color, up: bool) {
        let slot = match (kind, color) {
            (SightingKind::Task, Color::Red) => &mut self.tasks_red,
            (SightingKind::Task, Color::Green) => &mut self.tasks_green,
            (SightingKind::Robot, Color::Red) => &mut self.robots_red,
            (SightingKind::Robot, Color::Green) => &mut self.robots_green,
        };
        if up {
            *slot += 1;
        } else {
            *slot -= 1;
        }
    }
}

/// An agent's finite memory of what it has seen.
///
/// Task and robot sightings are kept in two buffers ordered by time. Counts
/// are maintained incrementally as sightings enter and leave.
#[derive(Debug, Clone)]
pub struct ObservationHistory {
    mode: HistoryMode,
    tasks: VecDeque<(f64, Color)>,
    robots: VecDeque<(f64, Color)>,
    counts: Counts,
}

impl ObservationHistory {
    pub fn new(mode: HistoryMode) -> Result<Self> {
        mode.validate()?;
        Ok(Self {
            mode,
            tasks: VecDeque::new(),
            robots: VecDeque::new(),
            counts: Counts::default(),
        })
    }

    pub fn mode(&self) -> HistoryMode {
        self.mode
    }

    /// Adds a sighting. Sightings must arrive in nondecreasing time order.
    pub fn record(&mut self, s: Sighting) {
        let buf = match s.kind {
            SightingKind::Task => &mut self.tasks,
            SightingKind::Robot => &mut self.robots,
        };
        debug_assert!(buf.back().is_none_or(|&(t, _)| t <= s.time));
        buf.push_back((s.time, s.color));
        self.counts.bump(s.kind, s.color, true);
        match self.mode {
            HistoryMode::CountWindow { length } => {
                if buf.len() > length {
                    let (_, c) = buf.pop_front().expect("non-empty buffer");
                    self.counts.bump(s.kind, c, false);
                }
            }
            HistoryMode::TimeWindow { .. } => self.advance(s.time),
        }
    }

    /// Drops sightings that have fallen out of a time window ending at `now`.
    /// Count windows are unaffected.
    pub fn advance(&mut self, now: f64) {
        let HistoryMode::TimeWindow { length } = self.mode else {
            return;
        };
        let cutoff = now - length;
        for (kind, buf) in [
            (SightingKind::Task, &mut self.tasks),
            (SightingKind::Robot, &mut self.robots),
        ] {
            while let Some(&(t, c)) = buf.front() {
                if t >= cutoff {
                    break;
                }
                buf.pop_front();
                self.counts.bump(kind, c, false);
            }
        }
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    /// All retained sightings, tasks first, each group oldest first.
    pub fn entries(&self) -> impl Iterator<Item = Sighting> + '_ {
        let tasks = self.tasks.iter().map(|&(time, color)| Sighting {
            time,
            kind: SightingKind::Task,
            color,
        });
        let robots = self.robots.iter().map(|&(time, color)| Sighting {
            time,
            kind: SightingKind::Robot,
            color,
        });
        tasks.chain(robots)
    }

    pub fn len(&self) -> usize {
        self.tasks.len() + self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
