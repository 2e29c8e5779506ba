//! Wavemeter and alignment uncertainty budget.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpotError};
use crate::ybdata::MHZ;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBudget {
    /// Absolute frequency accuracy, Hz.
    pub sigma_absolute: f64,
    /// Relative accuracy between closely spaced lines, Hz.
    pub sigma_relative: f64,
    /// Systematic error per degree of beam misalignment, Hz/deg.
    pub alignment_slope: f64,
    /// Smallest detuning the spot technique resolves, Hz.
    pub resolution_floor: f64,
    /// Isotope-shift sigma for a pair of resolved lines, Hz.
    pub shift_sigma_resolved: f64,
    /// Isotope-shift sigma when either line sits in an unresolved cluster, Hz.
    pub shift_sigma_merged: f64,
}

impl Default for ErrorBudget {
    fn default() -> Self {
        ErrorBudget {
            sigma_absolute: 60.0 * MHZ,
            sigma_relative: 20.0 * MHZ,
            alignment_slope: 15.0 * MHZ,
            resolution_floor: 10.0 * MHZ,
            shift_sigma_resolved: 30.0 * MHZ,
            shift_sigma_merged: 60.0 * MHZ,
        }
    }
}

impl ErrorBudget {
    /// All terms zero: `measured` becomes the identity.
    pub fn zero() -> Self {
        ErrorBudget {
            sigma_absolute: 0.0,
            sigma_relative: 0.0,
            alignment_slope: 0.0,
            resolution_floor: 0.0,
            shift_sigma_resolved: 0.0,
            shift_sigma_merged: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_absolute,
            self.sigma_relative,
            self.alignment_slope,
            self.resolution_floor,
            self.shift_sigma_resolved,
            self.shift_sigma_merged,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SpotError::Domain("error budget terms must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::Absolute => self.sigma_absolute,
            MeasurementKind::Relative => self.sigma_relative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Absolute,
    Relative,
}

impl std::str::FromStr for MeasurementKind {
    type Err = SpotError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "absolute" | "abs" => Ok(MeasurementKind::Absolute),
            "relative" | "rel" => Ok(MeasurementKind::Relative),
            other => Err(SpotError::Domain(format!("unknown measurement kind '{other}'"))),
        }
    }
}

/// A wavemeter reading of `true_frequency`: Gaussian noise of the kind's
/// sigma plus the systematic misalignment offset (positive per degree).
pub fn measured(true_frequency: f64, budget: &ErrorBudget, kind: MeasurementKind, misalignment_deg: f64, seed: u64) -> Result<f64> {
    if !(misalignment_deg >= 0.0) {
        return Err(SpotError::Domain(format!("misalignment must be >= 0 degrees, got {misalignment_deg}")));
    }
    budget.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = StandardNormal.sample(&mut rng);
    Ok(true_frequency + budget.sigma(kind) * z + budget.alignment_slope * misalignment_deg)
}

/// Sigma of an isotope shift between two lines: zero for a line against
/// itself, the resolved value when both lines are resolved, else the merged value.
pub fn combine_shift_sigma(a_resolved: bool, b_resolved: bool, budget: &ErrorBudget) -> f64 {
    if a_resolved && b_resolved {
        budget.shift_sigma_resolved
    } else {
        budget.shift_sigma_merged
    }
}

/// As [`combine_shift_sigma`], but returns zero when both sides are the same line.
pub fn shift_sigma_for(same_line: bool, a_resolved: bool, b_resolved: bool, budget: &ErrorBudget) -> f64 {
    if same_line {
        0.0
    } else {
        combine_shift_sigma(a_resolved, b_resolved, budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_is_identity() {
        let f = 751.526_65e12;
        assert_eq!(measured(f, &ErrorBudget::zero(), MeasurementKind::Absolute, 0.0, 3).unwrap(), f);
        assert_eq!(measured(f, &ErrorBudget::zero(), MeasurementKind::Relative, 2.0, 3).unwrap(), f);
    }

    #[test]
    fn one_degree_adds_fifteen_mhz() {
        let b = ErrorBudget { sigma_absolute: 0.0, ..ErrorBudget::default() };
        let got = measured(1.0e9, &b, MeasurementKind::Absolute, 1.0, 0).unwrap();
        assert_eq!(got - 1.0e9, 15.0e6);
        assert!(measured(0.0, &b, MeasurementKind::Absolute, -0.5, 0).is_err());
    }

    #[test]
    fn sample_sigma_converges() {
        let b = ErrorBudget::default();
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|i| measured(0.0, &b, MeasurementKind::Absolute, 0.0, i).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / 60e6 - 1.0).abs() < 0.03, "sd {sd}");
    }

    #[test]
    fn shift_sigma_classes() {
        let b = ErrorBudget::default();
        assert_eq!(combine_shift_sigma(true, true, &b), 30e6);
        assert_eq!(combine_shift_sigma(true, false, &b), 60e6);
        assert_eq!(combine_shift_sigma(false, false, &b), 60e6);
        assert_eq!(shift_sigma_for(true, true, true, &b), 0.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Absolute".parse::<MeasurementKind>().unwrap(), MeasurementKind::Absolute);
        assert!(matches!("bogus".parse::<MeasurementKind>(), Err(SpotError::Domain(_))));
    }
}
