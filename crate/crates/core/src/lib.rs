//! Emergent dynamic task allocation in multi-robot systems.
//!
//! Agents keep a finite history of task and robot sightings and switch
//! between two task types (`Red`, `Green`) at random decision epochs. The
//! crate provides:
//!
//! - shared domain types: [`EnvironmentSchedule`], [`ObservationHistory`],
//!   [`TransitionFunction`], [`TimeSeries`];
//! - [`microsim`]: an event-driven Monte Carlo simulator of N agents;
//! - [`analytic`]: closed-form history-averaged rates, step responses and
//!   the birth-death master equation;
//! - [`meanfield`]: the delayed integro-differential mean-field model and
//!   its binomially sampled phenomenological counterpart;
//! - [`harness`]: declarative experiment configs, CSV/manifest output and
//!   series comparison.

pub mod agent;
pub mod analytic;
pub mod error;
pub mod harness;
pub mod history;
pub mod meanfield;
pub mod microsim;
pub mod schedule;
pub mod series;
pub mod stats;
pub mod transition;

pub use agent::{AgentState, Color};
pub use analytic::{AveragedRates, DistributionOverCounts};
pub use error::{Error, Result};
pub use history::{HistoryMode, ObservationHistory, Sighting, SightingKind};
pub use microsim::{ObservationMode, SimParams};
pub use schedule::{EnvironmentSchedule, Segment};
pub use series::{Ensemble, TimeSeries};
pub use transition::{GFamily, SwitchProbs, TransitionFunction};
