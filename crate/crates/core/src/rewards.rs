//! Discriminator surrogate reward, the dwell-constraint judger, and their blend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{rescale_duration, Action, AgentState, EnvKind};

/// Clamp applied to discriminator scores before taking logs.
pub const SCORE_CLAMP: f64 = 1e-6;

/// Which side of the constraint the judger rewards staying on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgerMode {
    /// Reward staying once the dwell has reached `g`: `|g − Γ| / g` when `g ≤ Γ`.
    #[default]
    AsWritten,
    /// Reward staying while the dwell is still below `g`: `(g − Γ) / g` when `Γ ≤ g`.
    Prose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of the discriminator reward.
    pub eta: f64,
    pub judger_mode: JudgerMode,
    /// Actions counted as staying; the environment's default set when absent.
    pub stay_actions: Option<Vec<usize>>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            eta: 0.8,
            judger_mode: JudgerMode::AsWritten,
            stay_actions: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("rewards.eta", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn stay_set(&self, kind: EnvKind) -> Vec<usize> {
        self.stay_actions.clone().unwrap_or_else(|| kind.stay_actions().to_vec())
    }
}

/// Dwell of `s` on the constraint's unit scale.
pub fn gamma_extract(s: &AgentState, max_steps: usize) -> Result<f64> {
    rescale_duration(s.time_in_loc.min(max_steps), max_steps)
}

/// Intrinsic reward for a stay action judged against the constraint `g`,
/// with `gamma_next` the dwell of the realized next state.
pub fn judger_value(gamma_next: f64, is_stay: bool, g: f64, mode: JudgerMode) -> Result<f64> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::OutOfRange {
            what: "g",
            detail: format!("{g} must be positive"),
        });
    }
    if !is_stay {
        return Ok(0.0);
    }
    Ok(match mode {
        JudgerMode::AsWritten if g > gamma_next => 0.0,
        JudgerMode::AsWritten => (g - gamma_next).abs() / g,
        JudgerMode::Prose if gamma_next > g => 0.0,
        JudgerMode::Prose => (g - gamma_next) / g,
    })
}

pub fn judger_reward(
    next_state: &AgentState,
    action: Action,
    g: f64,
    stay_actions: &[usize],
    max_steps: usize,
    mode: JudgerMode,
) -> Result<f64> {
    let gamma = gamma_extract(next_state, max_steps)?;
    judger_value(gamma, stay_actions.contains(&action.0), g, mode)
}

/// `−ln(1 − D)`. Scores must lie in `[0, 1]` and are clamped to
/// `[1e-6, 1 − 1e-6]`, so saturated sigmoids remain usable.
pub fn surrogate_reward(d_score: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d_score) {
        return Err(Error::OutOfRange {
            what: "discriminator score",
            detail: format!("{d_score} is outside [0, 1]"),
        });
    }
    Ok(-(-d_score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)).ln_1p())
}

pub fn combined_reward(r_judger: f64, r_disc: f64, eta: f64) -> f64 {
    (1.0 - eta) * r_judger + eta * r_disc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::grid_actions;
    use rand::{Rng, SeedableRng};

    const STAYS: &[usize] = &[grid_actions::STAY, grid_actions::CHECK_IN];

    #[test]
    fn gamma_is_dwell_on_the_unit_scale() {
        let s = |t| AgentState {
            time_in_loc: t,
            ..Default::default()
        };
        assert_eq!(gamma_extract(&s(0), 100).unwrap(), 1e-4);
        assert_eq!(gamma_extract(&s(25), 100).unwrap(), 0.25);
        let gs: Vec<f64> = (0..100).map(|t| gamma_extract(&s(t), 100).unwrap()).collect();
        assert!(gs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn judger_examples() {
        let east = judger_value(0.8, STAYS.contains(&grid_actions::E), 0.5, JudgerMode::AsWritten).unwrap();
        assert_eq!(east, 0.0);
        let s = |t| AgentState {
            time_in_loc: t,
            ..Default::default()
        };
        let stay = Action(grid_actions::STAY);
        let r = judger_reward(&s(80), stay, 0.5, STAYS, 100, JudgerMode::AsWritten).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(judger_reward(&s(30), stay, 0.9, STAYS, 100, JudgerMode::AsWritten).unwrap(), 0.0);
        assert_eq!(judger_reward(&s(80), stay, 0.5, STAYS, 100, JudgerMode::Prose).unwrap(), 0.0);
        let r = judger_reward(&s(30), Action(grid_actions::CHECK_IN), 0.9, STAYS, 100, JudgerMode::Prose).unwrap();
        assert!((r - 0.6 / 0.9).abs() < 1e-12);
        assert!(judger_value(0.5, true, 0.0, JudgerMode::Prose).is_err());
    }

    #[test]
    fn surrogate_examples() {
        assert!((surrogate_reward(0.5).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((surrogate_reward(0.9).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(surrogate_reward(1e-9).unwrap() < 1e-5);
        assert!(surrogate_reward(1.0).unwrap().is_finite());
        assert!(surrogate_reward(-0.1).is_err());
        assert!(surrogate_reward(f64::NAN).is_err());
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_reward(0.3, 0.7, 1.0), 0.7);
        assert_eq!(combined_reward(0.3, 0.7, 0.0), 0.3);
        assert!((combined_reward(0.6, 0.5, 0.8) - 0.52).abs() < 1e-12);
        assert!(RewardConfig { eta: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn judger_is_non_negative_in_both_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let g = rng.random_range(1e-4..1.0);
            let gamma = rng.random_range(1e-4..1.0);
            for mode in [JudgerMode::AsWritten, JudgerMode::Prose] {
                assert!(judger_value(gamma, true, g, mode).unwrap() >= 0.0);
                assert_eq!(judger_value(gamma, false, g, mode).unwrap(), 0.0);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn surrogate_is_monotone(a in 1e-5f64..0.99999, b in 1e-5f64..0.99999) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assume!(hi - lo > 1e-12);
            proptest::prop_assert!(surrogate_reward(lo).unwrap() < surrogate_reward(hi).unwrap());
        }
    }
}
