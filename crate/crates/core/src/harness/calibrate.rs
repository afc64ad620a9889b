//! Fits a [`HardwareProfile`] to measured iteration latencies.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::HardwareProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    Decode,
}

/// One measured iteration: `phase,batch_tokens,kv_tokens,latency_s`.
/// `batch_tokens` is the prompt tokens processed and is ignored for decode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub phase: Phase,
    pub batch_tokens: usize,
    pub kv_tokens: usize,
    pub latency_s: f64,
}

pub fn read_samples(path: &Path) -> Result<Vec<LatencySample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let s: LatencySample = row.map_err(|e| Error::Trace {
            path: path.to_path_buf(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: HardwareProfile,
    pub rmse_s: f64,
    pub samples: usize,
}

/// Joint least squares over both phases. The KV slope is shared:
/// prefill = intercept + a * batch + c * kv, decode = base + c * kv.
pub fn calibrate(samples: &[LatencySample]) -> Result<Calibration> {
    let prefill = samples.iter().filter(|s| s.phase == Phase::Prefill).count();
    let decode = samples.len() - prefill;
    if prefill < 2 || decode < 2 {
        return Err(Error::config(
            "calibration samples",
            format!("need at least two rows per phase, got {prefill} prefill and {decode} decode"),
        ));
    }
    let n = samples.len();
    let mut a = DMatrix::<f64>::zeros(n, 4);
    let mut y = DVector::<f64>::zeros(n);
    for (i, s) in samples.iter().enumerate() {
        match s.phase {
            Phase::Prefill => {
                a[(i, 0)] = s.batch_tokens as f64;
                a[(i, 1)] = 1.0;
            }
            Phase::Decode => a[(i, 3)] = 1.0,
        }
        a[(i, 2)] = s.kv_tokens as f64;
        y[i] = s.latency_s;
    }
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::config("calibration samples", e.to_string()))?;
    let rank = svd.rank(1e-9 * svd.singular_values.max());
    if rank < 4 {
        return Err(Error::config(
            "calibration samples",
            "degenerate design: vary batch_tokens and kv_tokens across rows",
        ));
    }
    let resid = &a * &x - &y;
    let profile = HardwareProfile {
        prompt_time_per_token: x[0],
        prompt_time_intercept: x[1],
        decode_time_per_token: x[2],
        decode_time_base: x[3],
    };
    profile.validate()?;
    Ok(Calibration {
        profile,
        rmse_s: (resid.norm_squared() / n as f64).sqrt(),
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn synth(p: &HardwareProfile) -> Vec<LatencySample> {
        let mut v = Vec::new();
        for (bt, kv) in [(100, 0), (500, 2000), (1000, 500), (2000, 8000), (64, 12000)] {
            v.push(LatencySample {
                phase: Phase::Prefill,
                batch_tokens: bt,
                kv_tokens: kv,
                latency_s: p.prompt_batch_time(bt, kv),
            });
        }
        for kv in [0, 1000, 4000, 9000, 16000] {
            v.push(LatencySample {
                phase: Phase::Decode,
                batch_tokens: 0,
                kv_tokens: kv,
                latency_s: p.decode_batch_time(kv),
            });
        }
        v
    }

    #[test]
    fn recovers_exact_profile() {
        let p = HardwareProfile::default();
        let c = calibrate(&synth(&p)).unwrap();
        assert_relative_eq!(c.profile.prompt_time_per_token, p.prompt_time_per_token, max_relative = 1e-8);
        assert_relative_eq!(c.profile.prompt_time_intercept, p.prompt_time_intercept, max_relative = 1e-8);
        assert_relative_eq!(c.profile.decode_time_per_token, p.decode_time_per_token, max_relative = 1e-6);
        assert_relative_eq!(c.profile.decode_time_base, p.decode_time_base, max_relative = 1e-8);
        assert!(c.rmse_s < 1e-9, "{}", c.rmse_s);
    }

    #[test]
    fn needs_both_phases() {
        let only: Vec<_> = synth(&HardwareProfile::default())
            .into_iter()
            .filter(|s| s.phase == Phase::Decode)
            .collect();
        assert!(calibrate(&only).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lat.csv");
        let samples = synth(&HardwareProfile::default());
        let mut w = csv::Writer::from_path(&path).unwrap();
        for s in &samples {
            w.serialize(s).unwrap();
        }
        w.flush().unwrap();
        assert_eq!(read_samples(&path).unwrap(), samples);
    }
}
