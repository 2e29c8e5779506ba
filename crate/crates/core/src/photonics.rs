//! Two-level laser–atom interaction in the rate-equation regime.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::beamsim::AtomSample;
use crate::error::{Result, SpotError};
use crate::ybdata::{Catalog, TransitionCatalog};

/// Gaussian profile is cut off beyond this many 1/e² radii.
pub const BEAM_CUTOFF_WAISTS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserBeam {
    /// 1..=4.
    pub index: u8,
    /// A point on the beam axis, m.
    pub origin: Vector3<f64>,
    /// Unit propagation direction.
    pub direction: Vector3<f64>,
    /// 1/e² intensity radius, m.
    pub waist_radius: f64,
    /// W/m².
    pub peak_intensity: f64,
}

impl LaserBeam {
    pub fn validate(&self) -> Result<()> {
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(SpotError::Domain(format!("beam {} direction is not a unit vector", self.index)));
        }
        if !(self.waist_radius > 0.0) || !(self.peak_intensity >= 0.0) {
            return Err(SpotError::Domain(format!("beam {} needs waist > 0 and intensity >= 0", self.index)));
        }
        Ok(())
    }

    /// Intensity at perpendicular distance `r` from the beam axis.
    pub fn intensity_at(&self, r: f64) -> f64 {
        if r > BEAM_CUTOFF_WAISTS * self.waist_radius {
            0.0
        } else {
            self.peak_intensity * (-2.0 * (r / self.waist_radius).powi(2)).exp()
        }
    }

    /// Perpendicular distance from `p` to the beam axis.
    pub fn distance_to_axis(&self, p: &Vector3<f64>) -> f64 {
        let rel = p - self.origin;
        (rel - self.direction * rel.dot(&self.direction)).norm()
    }
}

/// Laser tuning shared by all beams: signed offset from the ¹⁷⁴Yb line, Hz.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LaserState {
    pub detuning: f64,
}

impl LaserState {
    pub fn new(detuning: f64) -> Result<Self> {
        if !detuning.is_finite() {
            return Err(SpotError::Domain("detuning must be finite".into()));
        }
        Ok(LaserState { detuning })
    }
}

/// Effective detuning seen by a moving atom on a line at `line_hz`:
/// (f_ref + detuning − line) − (line/c)·(v·k̂).
pub fn doppler_detuning(atom: &AtomSample, beam: &LaserBeam, state: &LaserState, line_hz: f64, catalog: &Catalog) -> f64 {
    detuning_for_velocity(atom.velocity.dot(&beam.direction), state.detuning, line_hz, catalog)
}

#[inline]
pub(crate) fn detuning_for_velocity(v_along_beam: f64, detuning: f64, line_hz: f64, catalog: &Catalog) -> f64 {
    (catalog.transition.f_ref + detuning - line_hz) - line_hz / catalog.constants.c * v_along_beam
}

/// Photon scattering rate, s⁻¹: π·Γ·(s/2)/(1 + s + (2δ/Γ)²) with Γ the FWHM in Hz.
pub fn scattering_rate(delta_eff: f64, s: f64, gamma_fwhm: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(SpotError::Domain(format!("saturation parameter must be >= 0, got {s}")));
    }
    Ok(rate(delta_eff, s, gamma_fwhm))
}

#[inline]
pub(crate) fn rate(delta_eff: f64, s: f64, gamma_fwhm: f64) -> f64 {
    let x = 2.0 * delta_eff / gamma_fwhm;
    std::f64::consts::PI * gamma_fwhm * 0.5 * s / (1.0 + s + x * x)
}

/// s = I / I_sat.
pub fn saturation_parameter(intensity: f64, transition: &TransitionCatalog) -> Result<f64> {
    if !(intensity >= 0.0) {
        return Err(SpotError::Domain(format!("intensity must be >= 0, got {intensity}")));
    }
    Ok(intensity / transition.i_sat)
}

/// Power-broadened FWHM Γ√(1+s).
pub fn power_broadened_fwhm(s: f64, gamma_fwhm: f64) -> f64 {
    gamma_fwhm * (1.0 + s).sqrt()
}
