use serde::{Deserialize, Serialize};

use crate::history::ObservationHistory;

/// Task type, and the state of an agent committed to that task type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
}

impl Color {
    pub fn flipped(self) -> Self {
        match self {
            Color::Red => Color::Green,
            Color::Green => Color::Red,
        }
    }

    pub fn is_red(self) -> bool {
        self == Color::Red
    }
}

/// An agent's task state together with its private observation history.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub color: Color,
    pub history: ObservationHistory,
    pub next_decision_time: f64,
}

impl AgentState {
    pub fn new(color: Color, history: ObservationHistory, first_decision: f64) -> Self {
        Self {
            color,
            history,
            next_decision_time: first_decision,
        }
    }
}
