//! Angle-resolved Doppler shifts: Δf = (f0/c)·v·cosθ, and the weighted fit
//! of mean beam velocity and rest frequency.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpotError};

/// Default tilt series, degrees.
pub const DEFAULT_ANGLES_DEG: [f64; 8] = [63.0, 70.0, 75.0, 80.0, 100.0, 105.0, 110.0, 117.0];

/// Frequency shift seen by atoms moving at `v` at angle `theta_deg` to the beam.
pub fn doppler_shift(f0: f64, v: f64, theta_deg: f64, c: f64) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(SpotError::Domain(format!("rest frequency must be positive, got {f0}")));
    }
    Ok(f0 / c * v * theta_deg.to_radians().cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerRecord {
    pub theta_deg: f64,
    pub measured_frequency: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DopplerDataset {
    pub records: Vec<DopplerRecord>,
}

impl DopplerDataset {
    pub fn new(records: Vec<DopplerRecord>) -> Result<Self> {
        let d = DopplerDataset { records };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if !(r.theta_deg > 0.0 && r.theta_deg < 180.0) {
                return Err(SpotError::Domain(format!("angle {} outside (0, 180) degrees", r.theta_deg)));
            }
            if !(r.sigma > 0.0) || !r.sigma.is_finite() {
                return Err(SpotError::Domain(format!("sigma must be positive, got {}", r.sigma)));
            }
            if !r.measured_frequency.is_finite() {
                return Err(SpotError::Domain("measured frequency must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerFitResult {
    /// m/s.
    pub v_mean: f64,
    /// Hz.
    pub f0: f64,
    /// Covariance of (v_mean, f0): [[m²/s², m·Hz/s], [m·Hz/s, Hz²]].
    pub covariance: [[f64; 2]; 2],
    /// measured − model, Hz.
    pub residuals: Vec<f64>,
    /// `None` when there are no degrees of freedom left.
    pub chi2_per_dof: Option<f64>,
}

impl DopplerFitResult {
    pub fn sigma_v(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn sigma_f0(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
}

/// Weighted least-squares objective in the linear parameters (f0, b), with
/// b = f0·v/c.
pub fn objective(data: &DopplerDataset, f0: f64, b: f64) -> f64 {
    data.records
        .iter()
        .map(|r| ((r.measured_frequency - f0 - b * r.theta_deg.to_radians().cos()) / r.sigma).powi(2))
        .sum()
}

/// Analytic gradient of [`objective`] with respect to (f0, b).
pub fn objective_gradient(data: &DopplerDataset, f0: f64, b: f64) -> [f64; 2] {
    let mut g = [0.0; 2];
    for r in &data.records {
        let x = r.theta_deg.to_radians().cos();
        let w = 1.0 / (r.sigma * r.sigma);
        let res = r.measured_frequency - f0 - b * x;
        g[0] -= 2.0 * w * res;
        g[1] -= 2.0 * w * res * x;
    }
    g
}

/// Closed-form fit of f = f0 + b·cosθ, then v = b·c/f0.
pub fn fit(data: &DopplerDataset, c: f64) -> Result<DopplerFitResult> {
    data.validate()?;
    if data.len() < 2 {
        return Err(SpotError::InsufficientData(format!("{} points, need at least 2", data.len())));
    }
    // Centre the regressor on its weighted mean so the normal equations stay
    // well conditioned when f0 is ~10¹⁵ and shifts ~10⁸.
    let (mut sw, mut swx, mut swy) = (0.0, 0.0, 0.0);
    for r in &data.records {
        let w = 1.0 / (r.sigma * r.sigma);
        sw += w;
        swx += w * r.theta_deg.to_radians().cos();
        swy += w * r.measured_frequency;
    }
    let (xbar, ybar) = (swx / sw, swy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for r in &data.records {
        let w = 1.0 / (r.sigma * r.sigma);
        let dx = r.theta_deg.to_radians().cos() - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * (r.measured_frequency - ybar);
    }
    let spread = data.records.iter().map(|r| (r.theta_deg.to_radians().cos() - xbar).abs()).fold(0.0, f64::max);
    if !(sxx > 0.0) || spread < 1e-12 {
        return Err(SpotError::RankDeficient("all points share the same cos(theta)".into()));
    }
    let b = sxy / sxx;
    let f0 = ybar - b * xbar;
    if !(f0 > 0.0) {
        return Err(SpotError::Numerical(format!("fitted rest frequency {f0} is not positive")));
    }

    // Cov(f0, b) from the inverse normal matrix.
    let var_b = 1.0 / sxx;
    let var_f0 = 1.0 / sw + xbar * xbar / sxx;
    let cov_f0_b = -xbar / sxx;
    // v = c·b/f0: J = [∂v/∂f0, ∂v/∂b] = [−c·b/f0², c/f0]
    let v = c * b / f0;
    let (jf, jb) = (-c * b / (f0 * f0), c / f0);
    let var_v = jf * jf * var_f0 + 2.0 * jf * jb * cov_f0_b + jb * jb * var_b;
    let cov_v_f0 = jf * var_f0 + jb * cov_f0_b;

    let residuals: Vec<f64> =
        data.records.iter().map(|r| r.measured_frequency - f0 - b * r.theta_deg.to_radians().cos()).collect();
    let chi2: f64 = residuals.iter().zip(&data.records).map(|(res, r)| (res / r.sigma).powi(2)).sum();
    let dof = data.len() - 2;
    Ok(DopplerFitResult {
        v_mean: v,
        f0,
        covariance: [[var_v, cov_v_f0], [cov_v_f0, var_f0]],
        residuals,
        chi2_per_dof: (dof > 0).then(|| chi2 / dof as f64),
    })
}

/// Synthetic points: f0 + Δf(θ) plus seeded Gaussian noise. With
/// `sigma = 0` the points lie on the curve and carry a nominal 1 Hz sigma.
pub fn synthesize_dataset(v: f64, f0: f64, angles_deg: &[f64], sigma: f64, seed: u64, c: f64) -> Result<DopplerDataset> {
    if angles_deg.is_empty() {
        return Err(SpotError::EmptySequence("no angles given".into()));
    }
    if !(sigma >= 0.0) {
        return Err(SpotError::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = angles_deg
        .iter()
        .map(|&theta| {
            let z: f64 = StandardNormal.sample(&mut rng);
            Ok(DopplerRecord {
                theta_deg: theta,
                measured_frequency: f0 + doppler_shift(f0, v, theta, c)? + sigma * z,
                sigma: if sigma > 0.0 { sigma } else { 1.0 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DopplerDataset::new(records)
}
