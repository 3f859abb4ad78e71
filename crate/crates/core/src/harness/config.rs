//! Experiment configuration files.
//!
//! A config is a TOML document. Top-level keys describe the experiment as a
//! whole; exactly one engine section carries the engine's parameters. Unknown
//! keys anywhere are rejected.
//!
//! ```toml
//! name = "fig2_h50"
//! engine = "microsim"
//! runs = 10
//! master_seed = 2005
//! t_end = 1500.0
//! sample_dt = 1.0
//!
//! [schedule]
//! total_tasks = 50
//! segments = [
//!   { start = 0.0, mu_r = 0.3 },
//!   { start = 500.0, mu_r = 0.8 },
//!   { start = 1000.0, mu_r = 0.5 },
//! ]
//!
//! [microsim]
//! n_agents = 20
//! alpha = 0.042
//! epsilon = 0.1
//! mode = "tasks_only"
//! transition = "ratio"
//! initial_red_fraction = 1.0
//! history = { kind = "time_window", length = 50.0 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryMode;
use crate::microsim::{DecisionClock, ObservationMode, SimParams};
use crate::schedule::EnvironmentSchedule;
use crate::transition::{GFamily, TransitionFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Microsim,
    Analytic,
    MeanfieldOde,
    MeanfieldStochastic,
    MasterEquation,
}

impl Engine {
    /// Engines driven by random numbers.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Engine::Microsim | Engine::MeanfieldStochastic)
    }

    pub fn name(self) -> &'static str {
        match self {
            Engine::Microsim => "microsim",
            Engine::Analytic => "analytic",
            Engine::MeanfieldOde => "meanfield_ode",
            Engine::MeanfieldStochastic => "meanfield_stochastic",
            Engine::MasterEquation => "master_equation",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Engine::Microsim => "microsim",
            Engine::Analytic => "analytic",
            Engine::MeanfieldOde | Engine::MeanfieldStochastic => "meanfield",
            Engine::MasterEquation => "master_equation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrosimSection {
    pub n_agents: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub history: HistoryMode,
    pub mode: ObservationMode,
    pub transition: TransitionFunction,
    pub initial_red_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_rate: Option<f64>,
    #[serde(default)]
    pub decision_clock: DecisionClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSection {
    pub alpha: f64,
    pub epsilon: f64,
    /// Time window, seconds.
    pub history_length: f64,
    pub initial_red_fraction: f64,
}

/// Mean-field parameters in model time units; the schedule and outputs are
/// converted with `time_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanfieldSection {
    pub family: GFamily,
    #[serde(default = "default_model_epsilon")]
    pub epsilon: f64,
    pub history_length: f64,
    pub initial_red_fraction: f64,
    /// Integration / iteration step. Defaults to the largest stable step for
    /// the ODE and to one model unit for the stochastic iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Population size, required by `meanfield_stochastic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSection {
    pub n_agents: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub history_length: f64,
    pub initial_red_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub t_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_dwell")]
    pub dwell: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            band: default_band(),
            dwell: default_dwell(),
        }
    }
}

fn default_model_epsilon() -> f64 {
    1.0
}
fn default_band() -> f64 {
    0.05
}
fn default_dwell() -> f64 {
    50.0
}
fn default_runs() -> usize {
    1
}
fn default_seed() -> u64 {
    1
}
fn default_time_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub engine: Engine,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seconds per model time unit.
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    /// Seconds.
    pub t_end: f64,
    /// Output sampling interval, seconds.
    pub sample_dt: f64,
    pub schedule: EnvironmentSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microsim: Option<MicrosimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meanfield: Option<MeanfieldSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_equation: Option<MasterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramSection>,
    #[serde(default)]
    pub convergence: ConvergenceSection,
}

fn field(name: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {reason}"))
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(field(name, format!("{x} must be positive")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the resolved config stored in a run manifest
    /// (`.json`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let cfg = manifest
                .get("config")
                .ok_or_else(|| Error::Config("manifest has no `config` entry".into()))?;
            let cfg: Self =
                serde_json::from_value(cfg.clone()).map_err(|e| Error::Config(e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            || self.name.starts_with('.')
        {
            return Err(field("name", "use letters, digits, '_', '-', '.' only"));
        }
        if self.runs == 0 {
            return Err(field("runs", "must be at least 1"));
        }
        if self.master_seed == 0 {
            return Err(field("master_seed", "must be positive"));
        }
        positive("time_scale", self.time_scale)?;
        positive("sample_dt", self.sample_dt)?;
        positive("t_end", self.t_end)?;
        positive("convergence.band", self.convergence.band)?;
        if !(self.convergence.dwell.is_finite() && self.convergence.dwell >= 0.0) {
            return Err(field("convergence.dwell", "must be >= 0"));
        }

        let present = [
            ("microsim", self.microsim.is_some()),
            ("analytic", self.analytic.is_some()),
            ("meanfield", self.meanfield.is_some()),
            ("master_equation", self.master_equation.is_some()),
        ];
        let wanted = self.engine.section();
        for (name, is_present) in present {
            if name == wanted && !is_present {
                return Err(field(
                    name,
                    format!("section required by engine {}", self.engine.name()),
                ));
            }
            if name != wanted && is_present {
                return Err(field(
                    name,
                    format!("section not used by engine {}", self.engine.name()),
                ));
            }
        }
        if !self.engine.is_stochastic() && self.runs != 1 {
            return Err(field("runs", "deterministic engines take runs = 1"));
        }
        if let Some(hist) = &self.histogram {
            if self.engine != Engine::Microsim {
                return Err(field("histogram", "only available for engine microsim"));
            }
            if !(hist.t_start.is_finite() && hist.t_start >= 0.0) {
                return Err(field("histogram.t_start", "must be >= 0"));
            }
        }

        match self.engine {
            Engine::Microsim => self
                .sim_params()
                .expect("section checked above")
                .validate()
                .map_err(|e| field("microsim", e))?,
            Engine::Analytic => {
                let a = self.analytic.as_ref().expect("section checked above");
                positive("analytic.alpha", a.alpha)?;
                positive("analytic.epsilon", a.epsilon)?;
                positive("analytic.history_length", a.history_length)?;
                fraction("analytic.initial_red_fraction", a.initial_red_fraction)?;
            }
            Engine::MeanfieldOde | Engine::MeanfieldStochastic => {
                let m = self.meanfield.as_ref().expect("section checked above");
                positive("meanfield.epsilon", m.epsilon)?;
                positive("meanfield.history_length", m.history_length)?;
                fraction("meanfield.initial_red_fraction", m.initial_red_fraction)?;
                if let Some(dt) = m.dt {
                    positive("meanfield.dt", dt)?;
                }
                match (self.engine, m.n_agents) {
                    (Engine::MeanfieldStochastic, None) => {
                        return Err(field(
                            "meanfield.n_agents",
                            "required by meanfield_stochastic",
                        ))
                    }
                    (Engine::MeanfieldStochastic, Some(0)) => {
                        return Err(field("meanfield.n_agents", "must be at least 1"))
                    }
                    (Engine::MeanfieldOde, Some(_)) => {
                        return Err(field("meanfield.n_agents", "not used by meanfield_ode"))
                    }
                    _ => {}
                }
            }
            Engine::MasterEquation => {
                let m = self
                    .master_equation
                    .as_ref()
                    .expect("section checked above");
                if m.n_agents == 0 {
                    return Err(field("master_equation.n_agents", "must be at least 1"));
                }
                positive("master_equation.alpha", m.alpha)?;
                positive("master_equation.epsilon", m.epsilon)?;
                positive("master_equation.history_length", m.history_length)?;
                fraction(
                    "master_equation.initial_red_fraction",
                    m.initial_red_fraction,
                )?;
                if let Some(dt) = m.dt {
                    positive("master_equation.dt", dt)?;
                }
            }
        }
        Ok(())
    }

    /// Simulator parameters for engine `microsim`.
    pub fn sim_params(&self) -> Option<SimParams> {
        let m = self.microsim.as_ref()?;
        Some(SimParams {
            n_agents: m.n_agents,
            alpha: m.alpha,
            epsilon: m.epsilon,
            history: m.history,
            mode: m.mode,
            transition: m.transition,
            t_end: self.t_end,
            sample_dt: self.sample_dt,
            initial_red_fraction: m.initial_red_fraction,
            robot_rate: m.robot_rate,
            decision_clock: m.decision_clock,
        })
    }

    /// Fills every defaulted step size so the stored config fully determines
    /// the run.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if let Some(m) = cfg.meanfield.as_mut() {
            if m.dt.is_none() {
                m.dt = Some(match cfg.engine {
                    Engine::MeanfieldStochastic => 1.0,
                    _ => (m.history_length / 20.0).min(0.1 / m.epsilon),
                });
            }
        }
        if let Some(m) = cfg.master_equation.as_mut() {
            if m.dt.is_none() {
                let max_dt = 0.1 / (m.epsilon * m.n_agents as f64);
                let per_sample = (cfg.sample_dt / max_dt).ceil();
                m.dt = Some(cfg.sample_dt / per_sample);
            }
        }
        cfg
    }
}

fn fraction(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(field(name, format!("{x} outside [0, 1]")))
    }
}
