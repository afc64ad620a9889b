use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingMode {
    /// Plain reward, no heuristic term.
    None,
    /// Heuristic term added with a fixed weight of 1.
    Additive,
    /// Heuristic term annealed away as training progresses.
    #[default]
    Guided,
}

impl ShapingMode {
    pub const ALL: [ShapingMode; 3] = [Self::None, Self::Additive, Self::Guided];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Additive => "additive",
            Self::Guided => "guided",
        }
    }
}

impl fmt::Display for ShapingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown shaping mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Reward per completed request.
    pub r_w: f64,
    pub gamma: f64,
    /// Decay rate of the guidance weight across episodes.
    pub beta_d: f64,
    pub shaping_mode: ShapingMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_w: 60.0,
            gamma: 0.99,
            beta_d: 0.5,
            shaping_mode: ShapingMode::Guided,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_w.is_finite() && self.r_w > 0.0) {
            return Err(Error::config("r_w", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        if !(self.beta_d.is_finite() && self.beta_d > 0.0) {
            return Err(Error::config("beta_d", "must be positive"));
        }
        Ok(())
    }

    /// Weight `c_k` of the heuristic term in episode `k`.
    pub fn shaping_coefficient(&self, episode: usize) -> f64 {
        match self.shaping_mode {
            ShapingMode::None => 0.0,
            ShapingMode::Additive => 1.0,
            ShapingMode::Guided => self.gamma * (-self.beta_d * episode as f64).exp(),
        }
    }

    /// Discount used for bootstrapped targets in episode `k`. Under guided
    /// shaping this is `gamma - c_k`.
    pub fn discount(&self, episode: usize) -> f64 {
        match self.shaping_mode {
            ShapingMode::Guided => (1.0 - (-self.beta_d * episode as f64).exp()) * self.gamma,
            _ => self.gamma,
        }
    }
}

/// One pending request's contribution to the latency term: `(1/T) (1 - f)`
/// with progress `f` clamped to `[0, 1]`.
pub fn pending_penalty(estimated_time: f64, emitted: usize, expected_decode: usize) -> f64 {
    let f = (emitted as f64 / expected_decode.max(1) as f64).clamp(0.0, 1.0);
    (1.0 - f) / estimated_time
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn guided_schedule() {
        let c = RewardConfig::default();
        assert_eq!(c.shaping_coefficient(0), c.gamma);
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let ck = c.shaping_coefficient(k);
            assert!(ck < prev);
            prev = ck;
            assert_relative_eq!(c.discount(k) + ck, c.gamma, epsilon = 1e-15);
        }
        let ratio = c.shaping_coefficient(50) / c.shaping_coefficient(0);
        assert!((ratio - (-25.0f64).exp()).abs() < 1e-12);
        assert_eq!(c.discount(0), 0.0);
    }

    #[test]
    fn other_modes() {
        let none = RewardConfig {
            shaping_mode: ShapingMode::None,
            ..Default::default()
        };
        assert_eq!(none.shaping_coefficient(0), 0.0);
        assert_eq!(none.discount(0), 0.99);
        let add = RewardConfig {
            shaping_mode: ShapingMode::Additive,
            ..Default::default()
        };
        assert_eq!(add.shaping_coefficient(7), 1.0);
        assert_eq!(add.discount(7), 0.99);
    }

    #[test]
    fn pending_term() {
        assert_relative_eq!(pending_penalty(10.0, 0, 100), 0.1);
        assert_eq!(pending_penalty(10.0, 150, 100), 0.0);
        assert_relative_eq!(pending_penalty(4.0, 50, 100), 0.125);
    }

    #[test]
    fn validation() {
        assert!(RewardConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { r_w: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { beta_d: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!("guided".parse::<ShapingMode>(), Ok(ShapingMode::Guided));
    }
}
