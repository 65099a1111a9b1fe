//! CRUDE-style recalibration of the value network's dropout statistics and
//! the variance → confidence map used for pruning.
//!
//! Residuals are normalized by the predicted standard deviation; the table
//! keeps their sorted list plus mean and unbiased variance, and the planner
//! moment-matches `(μ, σ²)` against them.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub const MIN_SAMPLES: usize = 10;
pub const MIN_SIGMA: f64 = 1e-6;
/// Floor on the confidence scale so a perfectly sharp calibration split
/// still yields a valid table.
pub const MIN_CONF_SCALE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {MIN_SAMPLES} samples with sigma >= {MIN_SIGMA}, got {usable} ({skipped} skipped)")]
    InsufficientData { usable: usize, skipped: usize },
    #[error("calibration file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One calibration observation: dropout mean, dropout variance, advantage target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrudeSample<T> {
    pub mu: T,
    pub var: T,
    pub target: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", bound = "T: Serialize + DeserializeOwned")]
pub struct CalibrationTable<T> {
    pub residuals: Vec<T>,
    #[serde(rename = "meanZ")]
    pub mean_z: T,
    #[serde(rename = "varZ")]
    pub var_z: T,
    pub conf_scale: T,
    pub skipped_low_sigma: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibratedEstimate<T> {
    pub mu: T,
    pub var: T,
    pub phi: T,
}

fn median<T: Real>(sorted: &[T]) -> T {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    }
}

fn sort<T: Real>(v: &mut [T]) {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
}

/// Fits the residual table and its confidence scale (median calibrated
/// variance over the same samples).
pub fn fit_crude<T: Real>(samples: &[CrudeSample<T>]) -> Result<CalibrationTable<T>, CalibrationError> {
    let min_sigma = T::lit(MIN_SIGMA);
    let usable: Vec<&CrudeSample<T>> = samples
        .iter()
        .filter(|s| s.var.sqrt() >= min_sigma && s.mu.is_finite() && s.target.is_finite())
        .collect();
    let skipped = samples.len() - usable.len();
    if usable.len() < MIN_SAMPLES {
        return Err(CalibrationError::InsufficientData { usable: usable.len(), skipped });
    }
    let mut residuals: Vec<T> = usable.iter().map(|s| (s.target - s.mu) / s.var.sqrt()).collect();
    sort(&mut residuals);
    let n = T::lit(residuals.len() as f64);
    let mean_z = residuals.iter().copied().sum::<T>() / n;
    let var_z = residuals.iter().map(|z| (*z - mean_z) * (*z - mean_z)).sum::<T>() / (n - T::one());

    let mut calibrated: Vec<T> = usable.iter().map(|s| s.var * var_z).collect();
    sort(&mut calibrated);
    let conf_scale = median(&calibrated).max(T::lit(MIN_CONF_SCALE));
    Ok(CalibrationTable { residuals, mean_z, var_z, conf_scale, skipped_low_sigma: skipped })
}

impl<T: Real> CalibrationTable<T> {
    /// `(μ + σ·meanζ, σ²·varζ)`; zero variance passes through unchanged.
    pub fn calibrate(&self, mu: T, var: T) -> (T, T) {
        crude_calibrate(mu, var, self)
    }

    /// `s² / (s² + σ̃²)`.
    pub fn confidence(&self, var: T) -> T {
        confidence(var, self)
    }

    pub fn estimate(&self, mu: T, var: T) -> CalibratedEstimate<T> {
        let (mu, var) = self.calibrate(mu, var);
        CalibratedEstimate { mu, var, phi: self.confidence(var) }
    }

    pub fn with_conf_scale(mut self, s2: T) -> Self {
        self.conf_scale = s2;
        self
    }

    pub fn cast<U: Real>(&self) -> CalibrationTable<U> {
        let c = |v: T| U::lit(v.as_f64());
        CalibrationTable {
            residuals: self.residuals.iter().map(|v| c(*v)).collect(),
            mean_z: c(self.mean_z),
            var_z: c(self.var_z),
            conf_scale: c(self.conf_scale),
            skipped_low_sigma: self.skipped_low_sigma,
        }
    }
}

impl<T: Real + Serialize + DeserializeOwned> CalibrationTable<T> {
    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn crude_calibrate<T: Real>(mu: T, var: T, table: &CalibrationTable<T>) -> (T, T) {
    if var <= T::zero() {
        return (mu, T::zero());
    }
    (mu + var.sqrt() * table.mean_z, var * table.var_z)
}

pub fn confidence<T: Real>(var: T, table: &CalibrationTable<T>) -> T {
    let s2 = table.conf_scale;
    s2 / (s2 + var.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(mean_z: f64, var_z: f64, s2: f64) -> CalibrationTable<f64> {
        CalibrationTable { residuals: vec![0.0], mean_z, var_z, conf_scale: s2, skipped_low_sigma: 0 }
    }

    fn sample(mu: f64, var: f64, target: f64) -> CrudeSample<f64> {
        CrudeSample { mu, var, target }
    }

    #[test]
    fn exact_predictions_give_zero_residuals() {
        let s: Vec<_> = (0..12).map(|i| sample(i as f64, 1.0 + i as f64, i as f64)).collect();
        let t = fit_crude(&s).unwrap();
        assert!(t.residuals.iter().all(|z| *z == 0.0));
        assert_eq!((t.mean_z, t.var_z), (0.0, 0.0));
        assert!(t.conf_scale > 0.0);
    }

    #[test]
    fn hand_residuals() {
        let mut s = vec![sample(0.0, 1.0, -1.0), sample(0.0, 1.0, 0.0), sample(0.0, 1.0, 1.0)];
        // pad with repeats of the same three so the minimum count is met
        s = s.iter().cycle().take(12).copied().collect();
        let t = fit_crude(&s).unwrap();
        assert_eq!(t.mean_z, 0.0);
        assert!((t.var_z - 8.0 / 11.0).abs() < 1e-12);
        assert!(t.residuals.windows(2).all(|w| w[0] <= w[1]));

        let three = [-1.0, 0.0, 1.0];
        let m = three.iter().sum::<f64>() / 3.0;
        assert_eq!(three.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / 2.0, 1.0);
    }

    #[test]
    fn low_sigma_samples_are_skipped() {
        let mut s: Vec<_> = (0..10).map(|i| sample(0.0, 4.0, i as f64)).collect();
        s.push(sample(0.0, 1e-14, 5.0));
        let t = fit_crude(&s).unwrap();
        assert_eq!(t.skipped_low_sigma, 1);
        assert_eq!(t.residuals.len(), 10);
        s.truncate(5);
        assert!(matches!(fit_crude(&s), Err(CalibrationError::InsufficientData { usable: 5, skipped: 0 })));
    }

    #[test]
    fn calibrate_examples() {
        assert_eq!(crude_calibrate(3.0, 2.0, &table(0.0, 1.0, 1.0)), (3.0, 2.0));
        assert_eq!(crude_calibrate(10.0, 1.0, &table(0.5, 4.0, 1.0)), (10.5, 4.0));
        assert_eq!(crude_calibrate(7.0, 0.0, &table(0.5, 4.0, 1.0)), (7.0, 0.0));
    }

    #[test]
    fn confidence_endpoints() {
        let t = table(0.0, 1.0, 2.5);
        assert_eq!(confidence(0.0, &t), 1.0);
        assert_eq!(confidence(2.5, &t), 0.5);
        assert!(confidence(1e12, &t) < 1e-11);
    }

    #[test]
    fn json_roundtrip_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("calib.json");
        let t = CalibrationTable { residuals: vec![-0.5, 0.25], mean_z: 0.1, var_z: 1.2, conf_scale: 3.0, skipped_low_sigma: 2 };
        t.save(&p).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        for key in ["residuals", "meanZ", "varZ", "confScale", "skippedLowSigma"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(CalibrationTable::<f64>::load(&p).unwrap(), t);
    }

    proptest! {
        #[test]
        fn phi_strictly_decreasing(s2 in 1e-3f64..1e3, a in 0.0f64..1e3, d in 1e-3f64..1e3) {
            let t = table(0.0, 1.0, s2);
            let (p, q) = (confidence(a, &t), confidence(a + d, &t));
            prop_assert!(q < p && p <= 1.0 && q > 0.0);
        }

        #[test]
        fn calibrate_is_affine_in_mu_and_linear_in_var(
            m in -3.0f64..3.0, v in 0.1f64..5.0,
            mu1 in -1e3f64..1e3, mu2 in -1e3f64..1e3, var in 1e-3f64..1e3, k in 0.1f64..10.0,
        ) {
            let t = table(m, v, 1.0);
            let (a, va) = crude_calibrate(mu1, var, &t);
            let (b, vb) = crude_calibrate(mu2, var, &t);
            prop_assert!(((a - b) - (mu1 - mu2)).abs() < 1e-9);
            prop_assert_eq!(va, vb);
            let (_, vk) = crude_calibrate(mu1, k * var, &t);
            prop_assert!((vk - k * va).abs() <= 1e-9 * vk.abs().max(1.0));
        }
    }
}
