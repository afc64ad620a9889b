//! Analytic estimate of how much an incoming request disturbs the requests
//! already placed on an instance.
//!
//! An instance load is a list of `(p_j, d_j)` pairs: the prompt tokens and
//! decode tokens emitted so far for every resident request.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpactConfig {
    pub grad1: f64,
    pub grad2: f64,
    /// Prompt-impact budget in seconds.
    #[serde(rename = "epsilon_s")]
    pub epsilon: f64,
    pub alpha: f64,
    /// Power applied to the incoming prompt length in the prompt score (1 or 2).
    pub prompt_exponent: u32,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        Self {
            grad1: 3.2e-4,
            grad2: 3.3e-5,
            epsilon: 0.5,
            alpha: 0.5,
            prompt_exponent: 2,
        }
    }
}

impl ImpactConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("grad1", self.grad1), ("grad2", self.grad2), ("epsilon_s", self.epsilon)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1]"));
        }
        if !matches!(self.prompt_exponent, 1 | 2) {
            return Err(Error::config("prompt_exponent", "must be 1 or 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptImpact {
    /// Raw score in seconds.
    pub t_p: f64,
    pub r_p: f64,
}

fn load_tokens(load: &[(usize, usize)]) -> f64 {
    load.iter().map(|&(p, d)| (p + d) as f64).sum()
}

pub fn prompt_impact(cfg: &ImpactConfig, p_i: usize, load: &[(usize, usize)]) -> PromptImpact {
    let t_p = cfg.grad1 * ((p_i as f64).powi(cfg.prompt_exponent as i32) + load_tokens(load));
    let r_p = if t_p <= cfg.epsilon { 1.0 } else { 1.0 - t_p / cfg.epsilon };
    PromptImpact { t_p, r_p }
}

pub fn decode_impact(cfg: &ImpactConfig, p_i: usize, d_i: usize, load: &[(usize, usize)]) -> f64 {
    -cfg.grad2 * (load_tokens(load) + (p_i + d_i) as f64)
}

pub fn mixing_penalty(cfg: &ImpactConfig, r_p: f64, r_d: f64) -> f64 {
    cfg.alpha * r_p + (1.0 - cfg.alpha) * r_d
}

/// Combined score of placing `(p_i, d_i)` on an instance with `load`.
/// Higher is better.
pub fn r_mixing(cfg: &ImpactConfig, p_i: usize, d_i: usize, load: &[(usize, usize)]) -> f64 {
    mixing_penalty(cfg, prompt_impact(cfg, p_i, load).r_p, decode_impact(cfg, p_i, d_i, load))
}

/// Instance with the highest mixing score; ties go to the lowest index.
pub fn best_instance<L: AsRef<[(usize, usize)]>>(cfg: &ImpactConfig, p_i: usize, d_i: usize, loads: &[L]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in loads.iter().enumerate() {
        let s = r_mixing(cfg, p_i, d_i, l.as_ref());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Score of the chosen instance minus the best achievable score. Any
/// action index past the last instance (deferral) scores 0.
pub fn heuristic_h<L: AsRef<[(usize, usize)]>>(
    cfg: &ImpactConfig,
    p_i: usize,
    d_i: usize,
    loads: &[L],
    chosen: usize,
) -> f64 {
    if chosen >= loads.len() {
        return 0.0;
    }
    let scores: Vec<f64> = loads.iter().map(|l| r_mixing(cfg, p_i, d_i, l.as_ref())).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores[chosen] - best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const EMPTY: [(usize, usize); 0] = [];

    #[test]
    fn prompt_impact_examples() {
        let c = ImpactConfig::default();
        let a = prompt_impact(&c, 30, &EMPTY);
        assert_relative_eq!(a.t_p, 3.2e-4 * 900.0, epsilon = 1e-15);
        assert_eq!(a.r_p, 1.0);
        let b = prompt_impact(&c, 50, &EMPTY);
        assert_relative_eq!(b.t_p, 0.8, epsilon = 1e-12);
        assert_relative_eq!(b.r_p, -0.6, epsilon = 1e-12);
    }

    #[test]
    fn linear_exponent() {
        let c = ImpactConfig {
            prompt_exponent: 1,
            ..ImpactConfig::default()
        };
        assert_relative_eq!(prompt_impact(&c, 50, &[(10, 5)]).t_p, 3.2e-4 * 65.0, epsilon = 1e-15);
    }

    #[test]
    fn decode_impact_examples() {
        let c = ImpactConfig::default();
        assert_relative_eq!(decode_impact(&c, 30000, 303, &EMPTY), -0.999999, epsilon = 1e-9);
        assert_relative_eq!(decode_impact(&c, 1, 0, &EMPTY), -3.3e-5, epsilon = 1e-18);
        assert!(decode_impact(&c, 1, 0, &[(1, 0)]) < decode_impact(&c, 1, 0, &EMPTY));
    }

    #[test]
    fn mixing_examples() {
        let c = ImpactConfig::default();
        assert_eq!(mixing_penalty(&c, 1.0, 0.0), 0.5);
        assert_relative_eq!(mixing_penalty(&c, -0.6, -0.4), -0.5, epsilon = 1e-15);
        let one = ImpactConfig { alpha: 1.0, ..c };
        assert_eq!(mixing_penalty(&one, -0.37, -0.9), -0.37);
        let zero = ImpactConfig { alpha: 0.0, ..c };
        assert_eq!(mixing_penalty(&zero, -0.37, -0.9), -0.9);
    }

    #[test]
    fn heuristic_examples() {
        let c = ImpactConfig::default();
        let loads = vec![vec![], vec![(800, 400)], vec![(100, 100)]];
        assert_eq!(heuristic_h(&c, 20, 100, &loads, 0), 0.0);
        assert!(heuristic_h(&c, 20, 100, &loads, 1) < 0.0);
        // No-op action.
        assert_eq!(heuristic_h(&c, 20, 100, &loads, 3), 0.0);
        let same = vec![vec![(5, 5)]; 4];
        for a in 0..4 {
            assert_eq!(heuristic_h(&c, 20, 100, &same, a), 0.0);
        }
        assert_eq!(best_instance(&c, 20, 100, &same), Some(0));
    }

    #[test]
    fn heuristic_two_instance_oracle() {
        // Loads chosen so the scores are -0.5 and -0.8 with alpha = 1:
        // r_p = 1 - T_p / eps, T_p = grad1 * (p^2 + sum).
        let c = ImpactConfig {
            alpha: 1.0,
            grad1: 1e-3,
            epsilon: 1.0,
            ..ImpactConfig::default()
        };
        let p = 10; // p^2 = 100 -> 0.1 s
        let l0 = vec![(1400, 0)]; // T_p = 1.5 -> r_p = -0.5
        let l1 = vec![(1700, 0)]; // T_p = 1.8 -> r_p = -0.8
        let h = heuristic_h(&c, p, 0, &[l0, l1], 1);
        assert_relative_eq!(h, -0.3, epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        assert!(ImpactConfig::default().validate().is_ok());
        assert!(ImpactConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(ImpactConfig { prompt_exponent: 3, ..Default::default() }.validate().is_err());
        assert!(ImpactConfig { grad2: 0.0, ..Default::default() }.validate().is_err());
    }

    fn loads_strategy() -> impl Strategy<Value = Vec<Vec<(usize, usize)>>> {
        prop::collection::vec(prop::collection::vec((0usize..2000, 0usize..2000), 0..6), 1..6)
    }

    proptest! {
        #[test]
        fn h_nonpositive_and_zero_on_best(loads in loads_strategy(), p in 1usize..1000, d in 0usize..4096) {
            let c = ImpactConfig::default();
            for a in 0..loads.len() {
                prop_assert!(heuristic_h(&c, p, d, &loads, a) <= 0.0);
            }
            let best = best_instance(&c, p, d, &loads).unwrap();
            prop_assert_eq!(heuristic_h(&c, p, d, &loads, best), 0.0);
        }

        #[test]
        fn impacts_monotone_in_load(load in prop::collection::vec((0usize..2000, 0usize..2000), 0..6),
                                    extra in (1usize..2000, 0usize..2000), p in 1usize..1000, d in 0usize..4096) {
            let c = ImpactConfig::default();
            let mut more = load.clone();
            more.push(extra);
            prop_assert!(decode_impact(&c, p, d, &more) < decode_impact(&c, p, d, &load));
            let a = prompt_impact(&c, p, &load);
            let b = prompt_impact(&c, p, &more);
            prop_assert!(b.t_p > a.t_p);
            if a.t_p > c.epsilon {
                prop_assert!(b.r_p < a.r_p);
            } else {
                prop_assert!(b.r_p <= a.r_p);
            }
        }

        #[test]
        fn argmax_invariant_under_uniform_scaling(base in prop::collection::vec(1usize..500, 2..5), p in 1usize..100, k in 2usize..4) {
            // Each instance holds a single request of size base[i]; scaling
            // every load by k keeps the ordering of total tokens.
            let c = ImpactConfig { alpha: 0.0, ..ImpactConfig::default() };
            let loads: Vec<Vec<(usize, usize)>> = base.iter().map(|&b| vec![(b, 0)]).collect();
            let scaled: Vec<Vec<(usize, usize)>> = base.iter().map(|&b| vec![(b * k, 0)]).collect();
            prop_assert_eq!(best_instance(&c, p, 10, &loads), best_instance(&c, p, 10, &scaled));
        }
    }
}
