//! Switching probabilities as functions of observed fractions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::Counts;

/// Modulation `g(z)` applied to the task/robot fraction mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GFamily {
    /// `z` for `z >= 0`, else 0.
    Linear,
    /// `100^z / 100`.
    Power,
}

impl GFamily {
    pub fn eval(self, z: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&z) {
            return Err(Error::invalid("z", format!("{z} outside [-1, 1]")));
        }
        Ok(self.eval_unchecked(z))
    }

    pub(crate) fn eval_unchecked(self, z: f64) -> f64 {
        match self {
            // Step is 1 at z = 0, but z * 1 is still 0 there.
            GFamily::Linear => {
                if z >= 0.0 {
                    z
                } else {
                    0.0
                }
            }
            GFamily::Power => 100f64.powf(z) / 100.0,
        }
    }
}

/// Family of rules mapping a history to switch probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionFunction {
    /// Observed red-task ratio; ignores robot sightings.
    Ratio,
    Linear,
    Power,
}

impl TransitionFunction {
    pub fn g_family(self) -> Option<GFamily> {
        match self {
            TransitionFunction::Ratio => None,
            TransitionFunction::Linear => Some(GFamily::Linear),
            TransitionFunction::Power => Some(GFamily::Power),
        }
    }

    pub fn uses_robot_sightings(self) -> bool {
        self.g_family().is_some()
    }

    /// Switch probabilities for an agent holding `counts`. An empty history
    /// (no tasks, or no robots for the robot-aware families) never switches.
    pub fn evaluate(self, counts: &Counts) -> SwitchProbs {
        match self.g_family() {
            None => transition_ratio(counts.tasks_red, counts.tasks_green),
            Some(family) => match (counts.task_fraction(), counts.robot_fraction()) {
                (Some(m), Some(n)) => full_unchecked(m, n, family),
                _ => SwitchProbs::STAY,
            },
        }
    }
}

/// `(P(green -> red), P(red -> green))` at one decision epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchProbs {
    pub to_red: f64,
    pub to_green: f64,
}

impl SwitchProbs {
    pub const STAY: SwitchProbs = SwitchProbs {
        to_red: 0.0,
        to_green: 0.0,
    };
}

pub fn transition_ratio(red: u32, green: u32) -> SwitchProbs {
    let total = red + green;
    if total == 0 {
        return SwitchProbs::STAY;
    }
    let total = f64::from(total);
    SwitchProbs {
        to_red: f64::from(red) / total,
        to_green: f64::from(green) / total,
    }
}

pub fn g_eval(family: GFamily, z: f64) -> Result<f64> {
    family.eval(z)
}

/// Robot-aware rule: `to_red = m * g(m - n)`, `to_green = (1 - m) * g(n - m)`
/// with `m` the observed red-task fraction and `n` the observed red-robot
/// fraction.
pub fn transition_full(task_red: f64, robot_red: f64, family: GFamily) -> Result<SwitchProbs> {
    if !(0.0..=1.0).contains(&task_red) {
        return Err(Error::invalid(
            "m_hat_r",
            format!("{task_red} outside [0, 1]"),
        ));
    }
    if !(0.0..=1.0).contains(&robot_red) {
        return Err(Error::invalid(
            "n_hat_r",
            format!("{robot_red} outside [0, 1]"),
        ));
    }
    Ok(full_unchecked(task_red, robot_red, family))
}

pub(crate) fn full_unchecked(m: f64, n: f64, family: GFamily) -> SwitchProbs {
    SwitchProbs {
        to_red: (m * family.eval_unchecked(m - n)).clamp(0.0, 1.0),
        to_green: ((1.0 - m) * family.eval_unchecked(n - m)).clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(
            transition_ratio(3, 1),
            SwitchProbs {
                to_red: 0.75,
                to_green: 0.25
            }
        );
        assert_eq!(transition_ratio(0, 0), SwitchProbs::STAY);
        assert_eq!(
            transition_ratio(5, 0),
            SwitchProbs {
                to_red: 1.0,
                to_green: 0.0
            }
        );
    }

    #[test]
    fn g_examples() {
        assert!(close(g_eval(GFamily::Power, 0.0).unwrap(), 0.01));
        assert!(close(g_eval(GFamily::Power, 1.0).unwrap(), 1.0));
        assert_eq!(g_eval(GFamily::Linear, -0.3).unwrap(), 0.0);
        assert_eq!(g_eval(GFamily::Linear, 0.0).unwrap(), 0.0);
        assert!(g_eval(GFamily::Linear, 1.2).is_err());
        assert!(g_eval(GFamily::Power, -1.01).is_err());
    }

    #[test]
    fn full_examples() {
        let p = transition_full(0.8, 0.3, GFamily::Linear).unwrap();
        assert!(close(p.to_red, 0.4) && close(p.to_green, 0.0));
        let p = transition_full(0.5, 0.5, GFamily::Power).unwrap();
        assert!(close(p.to_red, 0.005) && close(p.to_green, 0.005));
        let p = transition_full(0.5, 0.5, GFamily::Linear).unwrap();
        assert_eq!(p, SwitchProbs::STAY);
        assert!(transition_full(1.1, 0.5, GFamily::Linear).is_err());
        assert!(transition_full(0.5, -0.1, GFamily::Power).is_err());
    }

    #[test]
    fn empty_histories_never_switch() {
        let only_tasks = Counts {
            tasks_red: 4,
            tasks_green: 1,
            ..Counts::default()
        };
        assert_eq!(
            TransitionFunction::Linear.evaluate(&only_tasks),
            SwitchProbs::STAY
        );
        assert_eq!(
            TransitionFunction::Power.evaluate(&only_tasks),
            SwitchProbs::STAY
        );
        assert_eq!(
            TransitionFunction::Ratio.evaluate(&Counts::default()),
            SwitchProbs::STAY
        );
        let only_robots = Counts {
            robots_red: 2,
            ..Counts::default()
        };
        assert_eq!(
            TransitionFunction::Power.evaluate(&only_robots),
            SwitchProbs::STAY
        );
    }

    proptest! {
        #[test]
        fn ratio_in_unit_interval_and_sums_to_one(r in 0u32..500, g in 0u32..500) {
            let p = transition_ratio(r, g);
            prop_assert!((0.0..=1.0).contains(&p.to_red) && (0.0..=1.0).contains(&p.to_green));
            if r + g > 0 {
                prop_assert!((p.to_red + p.to_green - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn full_in_unit_interval(m in 0.0f64..=1.0, n in 0.0f64..=1.0, power in any::<bool>()) {
            let family = if power { GFamily::Power } else { GFamily::Linear };
            let p = transition_full(m, n, family).unwrap();
            prop_assert!((0.0..=1.0).contains(&p.to_red) && (0.0..=1.0).contains(&p.to_green));
        }

        #[test]
        fn tie_gives_floor_rates(m in 0.0f64..=1.0) {
            let lin = transition_full(m, m, GFamily::Linear).unwrap();
            prop_assert_eq!(lin, SwitchProbs::STAY);
            let pow = transition_full(m, m, GFamily::Power).unwrap();
            prop_assert!((pow.to_red - 0.01 * m).abs() < 1e-12);
            prop_assert!((pow.to_green - 0.01 * (1.0 - m)).abs() < 1e-12);
        }

        #[test]
        fn g_nondecreasing(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for family in [GFamily::Linear, GFamily::Power] {
                prop_assert!(family.eval(lo).unwrap() <= family.eval(hi).unwrap());
            }
        }
    }
}
