//! Token-count to wall-clock conversion for a single model replica.
//!
//! Prefill cost grows linearly with the number of prompt tokens in the
//! batch (compute bound). Decode iterations have a fixed floor plus a small
//! slope in the number of KV tokens resident on the replica (memory bound).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibration constants turning token counts into simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareProfile {
    /// Seconds per prompt token in a prefill iteration.
    pub prompt_time_per_token: f64,
    /// Launch overhead of a prefill iteration.
    pub prompt_time_intercept: f64,
    /// Seconds per KV token resident on the replica, charged on every iteration.
    pub decode_time_per_token: f64,
    /// Floor of a decode iteration; also the average unloaded iteration time.
    pub decode_time_base: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        Self {
            prompt_time_per_token: 3.2e-4,
            prompt_time_intercept: 0.026,
            decode_time_per_token: 1.0e-6,
            decode_time_base: 0.0167,
        }
    }
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("prompt_time_per_token", self.prompt_time_per_token),
            ("prompt_time_intercept", self.prompt_time_intercept),
            ("decode_time_per_token", self.decode_time_per_token),
            ("decode_time_base", self.decode_time_base),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("profile.{name}"),
                    format!("must be a positive finite number, got {value}"),
                ));
            }
        }
        if self.prompt_time_per_token <= self.decode_time_per_token {
            return Err(Error::config(
                "profile.prompt_time_per_token",
                "must exceed decode_time_per_token",
            ));
        }
        Ok(())
    }

    /// Decode throughput of a lone request, tokens per second.
    pub fn tokens_per_second_decode(&self) -> f64 {
        1.0 / self.decode_time_base
    }

    /// Cost of one prefill iteration.
    pub fn prompt_batch_time(&self, prompt_tokens_in_batch: usize, kv_tokens_in_flight: usize) -> f64 {
        self.prompt_time_intercept
            + self.prompt_time_per_token * prompt_tokens_in_batch as f64
            + self.decode_time_per_token * kv_tokens_in_flight as f64
    }

    /// Cost of one decode iteration.
    pub fn decode_batch_time(&self, total_tokens_in_flight: usize) -> f64 {
        self.decode_time_base + self.decode_time_per_token * total_tokens_in_flight as f64
    }

    /// Ideal completion time of a request served alone, ignoring queueing and
    /// interference.
    pub fn estimate_request_time(&self, prompt_tokens: usize, decode_tokens: usize) -> f64 {
        prompt_tokens as f64 * self.prompt_time_per_token
            + decode_tokens as f64 * self.decode_time_base
    }

    /// Time until a replica with `iterations_left` decode iterations frees up.
    pub fn estimate_instance_available(&self, iterations_left: usize) -> f64 {
        iterations_left as f64 * self.decode_time_base
    }
}

/// Heavy/light cut-offs, in seconds of estimated processing time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub heavy_prompt_seconds: f64,
    pub heavy_decode_seconds: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            heavy_prompt_seconds: 0.5,
            heavy_decode_seconds: 5.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.heavy_prompt_seconds > 0.0 && self.heavy_decode_seconds > 0.0) {
            return Err(Error::config("thresholds", "both thresholds must be positive"));
        }
        if self.heavy_decode_seconds <= self.heavy_prompt_seconds {
            return Err(Error::config(
                "thresholds.heavy_decode_seconds",
                "must exceed heavy_prompt_seconds",
            ));
        }
        Ok(())
    }

    pub fn is_heavy_prompt(&self, profile: &HardwareProfile, prompt_tokens: usize) -> bool {
        prompt_tokens as f64 * profile.prompt_time_per_token >= self.heavy_prompt_seconds
    }

    pub fn is_heavy_decode(&self, profile: &HardwareProfile, decode_tokens: usize) -> bool {
        decode_tokens as f64 * profile.decode_time_base >= self.heavy_decode_seconds
    }

    /// Smallest prompt length classified as heavy.
    pub fn min_heavy_prompt_tokens(&self, profile: &HardwareProfile) -> usize {
        first_true(|p| self.is_heavy_prompt(profile, p), self.heavy_prompt_seconds / profile.prompt_time_per_token)
    }

    /// Smallest decode length classified as heavy.
    pub fn min_heavy_decode_tokens(&self, profile: &HardwareProfile) -> usize {
        first_true(|d| self.is_heavy_decode(profile, d), self.heavy_decode_seconds / profile.decode_time_base)
    }
}

// Resolves the integer boundary exactly despite floating-point rounding of the
// analytic guess.
fn first_true(pred: impl Fn(usize) -> bool, guess: f64) -> usize {
    let mut n = guess.floor().max(0.0) as usize;
    while n > 0 && pred(n - 1) {
        n -= 1;
    }
    while !pred(n) {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestClass {
    LL,
    LH,
    HL,
    HH,
}

impl RequestClass {
    pub const ALL: [RequestClass; 4] = [Self::LL, Self::LH, Self::HL, Self::HH];

    pub fn from_parts(heavy_prompt: bool, heavy_decode: bool) -> Self {
        match (heavy_prompt, heavy_decode) {
            (false, false) => Self::LL,
            (false, true) => Self::LH,
            (true, false) => Self::HL,
            (true, true) => Self::HH,
        }
    }

    pub fn heavy_prompt(self) -> bool {
        matches!(self, Self::HL | Self::HH)
    }

    pub fn heavy_decode(self) -> bool {
        matches!(self, Self::LH | Self::HH)
    }
}

impl fmt::Display for RequestClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::LL => "LL",
            Self::LH => "LH",
            Self::HL => "HL",
            Self::HH => "HH",
        };
        f.write_str(s)
    }
}

pub fn classify_request(
    profile: &HardwareProfile,
    thresholds: &Thresholds,
    prompt_tokens: usize,
    decode_tokens: usize,
) -> RequestClass {
    RequestClass::from_parts(
        thresholds.is_heavy_prompt(profile, prompt_tokens),
        thresholds.is_heavy_decode(profile, decode_tokens),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Literal gradients with the 3.3e-5 decode slope, used where an example
    // is stated against those constants.
    fn literal_profile() -> HardwareProfile {
        HardwareProfile {
            decode_time_per_token: 3.3e-5,
            ..HardwareProfile::default()
        }
    }

    #[test]
    fn prompt_batch_time_intercept_only() {
        assert_eq!(HardwareProfile::default().prompt_batch_time(0, 0), 0.026);
    }

    #[test]
    fn prompt_batch_time_hand_computed() {
        let p = literal_profile();
        let expected = 0.026 + 3.2e-4 * 1000.0 + 3.3e-5 * 500.0;
        assert_relative_eq!(p.prompt_batch_time(1000, 500), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.3625, epsilon = 1e-12);
    }

    #[test]
    fn prompt_batch_time_near_measured_point() {
        // Measured 0.8026 s at 2720 prompt tokens; the affine model with the
        // stated slope sits about 12% above the measurement.
        let t = HardwareProfile::default().prompt_batch_time(2720, 0);
        assert_relative_eq!(t, 0.8964, epsilon = 1e-9);
        assert!((t - 0.8026).abs() / 0.8026 < 0.15);
    }

    #[test]
    fn decode_batch_time_cases() {
        let p = literal_profile();
        assert_eq!(p.decode_batch_time(0), p.decode_time_base);
        assert_relative_eq!(p.decode_batch_time(10_000), p.decode_time_base + 0.33, epsilon = 1e-12);
    }

    #[test]
    fn request_estimate_matches_seventeen_seconds() {
        let t = HardwareProfile::default().estimate_request_time(1000, 1000);
        assert_relative_eq!(t, 17.02, epsilon = 1e-9);
        assert!((t - 17.0).abs() / 17.0 < 0.02);
    }

    #[test]
    fn request_estimate_small_cases() {
        let p = HardwareProfile::default();
        assert_eq!(p.estimate_request_time(1, 0), p.prompt_time_per_token);
        assert_relative_eq!(p.estimate_request_time(500, 500), 0.16 + 8.35, epsilon = 1e-12);
    }

    #[test]
    fn instance_available() {
        let p = HardwareProfile::default();
        assert_eq!(p.estimate_instance_available(0), 0.0);
        assert_relative_eq!(p.estimate_instance_available(100), 100.0 * 0.0167, epsilon = 1e-12);
    }

    #[test]
    fn classification_boundaries() {
        let p = HardwareProfile::default();
        let t = Thresholds::default();
        assert_eq!(t.min_heavy_prompt_tokens(&p), 1563);
        assert_eq!(t.min_heavy_decode_tokens(&p), 300);
        assert_eq!(classify_request(&p, &t, 1562, 10), RequestClass::LL);
        assert_eq!(classify_request(&p, &t, 1563, 10), RequestClass::HL);
        assert_eq!(classify_request(&p, &t, 10, 299), RequestClass::LL);
        assert_eq!(classify_request(&p, &t, 10, 300), RequestClass::LH);
        assert_eq!(classify_request(&p, &t, 2000, 400), RequestClass::HH);
        assert_eq!(classify_request(&p, &t, 10, 10), RequestClass::LL);
    }

    #[test]
    fn validation_rejects_bad_profiles() {
        let mut p = HardwareProfile::default();
        assert!(p.validate().is_ok());
        p.decode_time_base = 0.0;
        assert!(p.validate().is_err());
        let p = HardwareProfile {
            decode_time_per_token: 1.0,
            ..HardwareProfile::default()
        };
        assert!(p.validate().is_err());
        let t = Thresholds {
            heavy_prompt_seconds: 6.0,
            heavy_decode_seconds: 5.0,
        };
        assert!(t.validate().is_err());
    }

    proptest! {
        #[test]
        fn batch_times_are_strictly_increasing(a in 0usize..100_000, b in 0usize..100_000, kv in 0usize..100_000) {
            let p = HardwareProfile::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assume!(lo < hi);
            prop_assert!(p.prompt_batch_time(lo, kv) < p.prompt_batch_time(hi, kv));
            prop_assert!(p.prompt_batch_time(kv, lo) < p.prompt_batch_time(kv, hi));
            prop_assert!(p.decode_batch_time(lo) < p.decode_batch_time(hi));
            prop_assert!(p.decode_batch_time(2 * lo) >= p.decode_batch_time(lo));
        }

        #[test]
        fn estimate_is_additive_in_decode(pt in 1usize..5000, d1 in 0usize..5000, d2 in 0usize..5000) {
            let p = HardwareProfile::default();
            let lhs = p.estimate_request_time(pt, d1 + d2);
            let rhs = p.estimate_request_time(pt, d1) + d2 as f64 * p.decode_time_base;
            prop_assert!((lhs - rhs).abs() < 1e-9);
            prop_assert!((p.estimate_request_time(pt, 0) - pt as f64 * p.prompt_time_per_token).abs() < 1e-12);
        }

        #[test]
        fn class_invariant_under_compensating_rescale(pt in 1usize..5000, d in 0usize..5000, scale in 0.25f64..4.0) {
            let p = HardwareProfile::default();
            let t = Thresholds::default();
            let scaled_p = HardwareProfile {
                prompt_time_per_token: p.prompt_time_per_token * scale,
                decode_time_base: p.decode_time_base * scale,
                ..p
            };
            let scaled_t = Thresholds {
                heavy_prompt_seconds: t.heavy_prompt_seconds * scale,
                heavy_decode_seconds: t.heavy_decode_seconds * scale,
            };
            // Compare against boundaries computed in the same arithmetic so
            // rounding at exact ties cannot flip the class.
            let base = classify_request(&p, &t, pt, d);
            let scaled = classify_request(&scaled_p, &scaled_t, pt, d);
            let near_prompt_edge = (pt as f64 * p.prompt_time_per_token - t.heavy_prompt_seconds).abs() < 1e-9;
            let near_decode_edge = (d as f64 * p.decode_time_base - t.heavy_decode_seconds).abs() < 1e-9;
            prop_assume!(!near_prompt_edge && !near_decode_edge);
            prop_assert_eq!(base, scaled);
        }

        #[test]
        fn instance_available_non_negative(n in 0usize..1_000_000) {
            prop_assert!(HardwareProfile::default().estimate_instance_available(n) >= 0.0);
        }
    }
}
