//! Monte-Carlo effusive atomic-beam source.
//!
//! Atoms leave a cylindrical oven tube. Speeds follow the flux-weighted
//! Maxwell–Boltzmann law p(v) ∝ v³ exp(−m v²/2k_BT); directions follow from
//! ballistic transmission through the tube: a Lambertian emitter on the
//! entrance disc and a straight flight to the exit disc. Wall re-emission is
//! not modelled.
//!
//! Sampling is split into blocks of [`BLOCK_SIZE`] atoms. Block `b` draws from
//! a ChaCha8 stream seeded with `seed` and stream id `b`, so the output is the
//! same for any number of worker threads.

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpotError};
use crate::ybdata::{Catalog, Composition};

/// Atoms per deterministic RNG block.
pub const BLOCK_SIZE: usize = 4096;

/// Mean axial speed the default oven is tuned to, m/s.
pub const DEFAULT_MEAN_AXIAL_VELOCITY: f64 = 260.0;

/// (3√π/4): flux-weighted mean speed in units of the most probable speed √(2k_BT/m).
pub const FLUX_MEAN_FACTOR: f64 = 1.329_340_388_179_137;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvenConfig {
    /// Centre of the exit aperture, m.
    pub origin: Vector3<f64>,
    /// Unit vector along the tube: the reference axis.
    pub axis: Vector3<f64>,
    pub tube_length: f64,
    pub bore_radius: f64,
    /// Oven temperature, K.
    pub temperature: f64,
    pub composition: Composition,
}

impl OvenConfig {
    /// 2 cm × 1.5 mm tube along +x, natural Yb, temperature giving a 260 m/s
    /// flux-mean axial speed.
    pub fn default_for(catalog: &Catalog) -> OvenConfig {
        let composition = catalog.natural_composition().clone();
        let temperature = temperature_for_velocity(DEFAULT_MEAN_AXIAL_VELOCITY, &composition, catalog)
            .expect("default velocity is bracketable");
        OvenConfig {
            origin: Vector3::zeros(),
            axis: Vector3::x(),
            tube_length: 0.02,
            bore_radius: 0.000_75,
            temperature,
            composition,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_composition(mut self, composition: Composition) -> Self {
        self.composition = composition;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if ((self.axis.norm() - 1.0).abs()) > 1e-9 {
            return Err(SpotError::Domain(format!("oven axis must be a unit vector, |axis| = {}", self.axis.norm())));
        }
        if !(self.tube_length > 0.0 && self.bore_radius > 0.0) {
            return Err(SpotError::Domain("tube length and bore radius must be positive".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(SpotError::Domain(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Largest polar angle a ballistic trajectory can make with the axis.
    pub fn max_polar_angle(&self) -> f64 {
        (2.0 * self.bore_radius / self.tube_length).atan()
    }

    /// Orthonormal transverse basis (e2, e3) with e2 in the camera plane.
    pub fn transverse_basis(&self) -> (Vector3<f64>, Vector3<f64>) {
        transverse_basis(&self.axis)
    }
}

/// Returns (e2, e3) completing `axis` to a right-handed frame. e2 = ẑ × axis
/// when that is well defined, so for axis = x̂ the frame is (x̂, ŷ, ẑ).
pub fn transverse_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut e2 = Vector3::z().cross(axis);
    if e2.norm() < 1e-6 {
        e2 = axis.cross(&Vector3::x());
    }
    let e2 = e2.normalize();
    let e3 = axis.cross(&e2);
    (e2, e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomSample {
    pub isotope: u16,
    /// Exit point on the aperture plane, m.
    pub position: Vector3<f64>,
    /// m/s.
    pub velocity: Vector3<f64>,
}

/// Most probable speed √(2k_BT/m).
pub fn most_probable_speed(temperature: f64, mass: f64, catalog: &Catalog) -> f64 {
    (2.0 * catalog.constants.k_b * temperature / mass).sqrt()
}

/// Flux-weighted CDF of speed: 1 − (1 + x²) e^{−x²}, x = v/v_p.
pub fn flux_speed_cdf(v: f64, most_probable: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let x2 = (v / most_probable).powi(2);
    1.0 - (1.0 + x2) * (-x2).exp()
}

/// Analytic flux-mean speed of the mixture at temperature `t`.
///
/// Directions are within a few degrees of the axis, so this is also the
/// flux-mean axial speed to better than 0.1 %.
pub fn analytic_mean_axial_velocity(t: f64, composition: &Composition, catalog: &Catalog) -> f64 {
    composition
        .iter()
        .map(|(a, w)| w * FLUX_MEAN_FACTOR * most_probable_speed(t, catalog.isotope_mass(a), catalog))
        .sum()
}

/// Oven temperature whose analytic flux-mean axial speed equals `v_target`.
/// Bisection over [1 mK, 10⁶ K] down to a 0.01 K bracket.
pub fn temperature_for_velocity(v_target: f64, composition: &Composition, catalog: &Catalog) -> Result<f64> {
    if !(v_target > 0.0) || !v_target.is_finite() {
        return Err(SpotError::Domain(format!("target velocity must be positive, got {v_target}")));
    }
    let f = |t: f64| analytic_mean_axial_velocity(t, composition, catalog) - v_target;
    let (mut lo, mut hi) = (1.0e-3, 1.0e6);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(SpotError::Domain(format!("no oven temperature in [{lo}, {hi}] K gives {v_target} m/s")));
    }
    while hi - lo > 0.01 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

struct Sampler<'a> {
    cumulative: Vec<(u16, f64)>,
    speed_scale: Vec<f64>,
    oven: &'a OvenConfig,
    e2: Vector3<f64>,
    e3: Vector3<f64>,
}

impl<'a> Sampler<'a> {
    fn new(oven: &'a OvenConfig, catalog: &Catalog) -> Self {
        let mut acc = 0.0;
        let mut cumulative = Vec::new();
        let mut speed_scale = Vec::new();
        for (a, w) in oven.composition.iter() {
            acc += w;
            cumulative.push((a, acc));
            speed_scale.push(most_probable_speed(oven.temperature, catalog.isotope_mass(a), catalog));
        }
        let (e2, e3) = oven.transverse_basis();
        Sampler { cumulative, speed_scale, oven, e2, e3 }
    }

    fn point_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
        let r = radius * rng.random::<f64>().sqrt();
        let phi = std::f64::consts::TAU * rng.random::<f64>();
        (r * phi.cos(), r * phi.sin())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> AtomSample {
        let u: f64 = rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|&(_, c)| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let isotope = self.cumulative[k].0;

        // v²/v_p² ~ Gamma(2, 1), i.e. a sum of two unit exponentials.
        let g = -((1.0 - rng.random::<f64>()) * (1.0 - rng.random::<f64>())).ln();
        let speed = self.speed_scale[k] * g.sqrt();

        // Entrance and exit points uniform on their discs, accepted with the
        // two-disc Lambertian kernel cos⁴θ.
        let (l, radius) = (self.oven.tube_length, self.oven.bore_radius);
        let (ex, ey, dx, dy) = loop {
            let (ax, ay) = Self::point_in_disc(rng, radius);
            let (bx, by) = Self::point_in_disc(rng, radius);
            let (dx, dy) = (bx - ax, by - ay);
            let cos2 = l * l / (l * l + dx * dx + dy * dy);
            if rng.random::<f64>() < cos2 * cos2 {
                break (bx, by, dx, dy);
            }
        };
        let dir = (self.oven.axis * l + self.e2 * dx + self.e3 * dy).normalize();
        AtomSample {
            isotope,
            position: self.oven.origin + self.e2 * ex + self.e3 * ey,
            velocity: dir * speed,
        }
    }
}

/// Draws `n` atoms from the oven. Identical `(oven, n, seed)` give identical output.
pub fn sample_atoms(oven: &OvenConfig, catalog: &Catalog, n: usize, seed: u64) -> Result<Vec<AtomSample>> {
    if n == 0 {
        return Err(SpotError::EmptySequence("at least one atom must be sampled".into()));
    }
    oven.validate()?;
    let sampler = Sampler::new(oven, catalog);
    let blocks = n.div_ceil(BLOCK_SIZE);
    let out: Vec<Vec<AtomSample>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK_SIZE.min(n - b * BLOCK_SIZE);
            (0..count).map(|_| sampler.draw(&mut rng)).collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxialVelocity {
    pub mean: f64,
    pub standard_error: f64,
}

/// Monte-Carlo mean of velocity·axis with its standard error.
pub fn mean_axial_velocity(oven: &OvenConfig, catalog: &Catalog, n: usize, seed: u64) -> Result<AxialVelocity> {
    let atoms = sample_atoms(oven, catalog, n, seed)?;
    let axial: Vec<f64> = atoms.iter().map(|a| a.velocity.dot(&oven.axis)).collect();
    let count = axial.len() as f64;
    let mean = axial.iter().sum::<f64>() / count;
    let var = if axial.len() > 1 {
        axial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(AxialVelocity { mean, standard_error: (var / count).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> &'static Catalog {
        Catalog::natural()
    }

    fn oven174(t: f64) -> OvenConfig {
        OvenConfig::default_for(cat()).with_composition(Composition::single(174)).with_temperature(t)
    }

    /// Trapezoid-rule mean of the v³ exp(−v²/v_p²) density.
    fn quadrature_flux_mean(vp: f64) -> f64 {
        let (n, vmax) = (200_000, 12.0 * vp);
        let h = vmax / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let v = i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p = v.powi(3) * (-(v / vp).powi(2)).exp();
            num += w * v * p;
            den += w * p;
        }
        num / den
    }

    #[test]
    fn flux_mean_factor_matches_quadrature() {
        let vp = 200.0;
        assert!((quadrature_flux_mean(vp) / vp - FLUX_MEAN_FACTOR).abs() < 1e-9);
        let analytic = 3.0 * std::f64::consts::PI.sqrt() / 4.0;
        assert!((analytic - FLUX_MEAN_FACTOR).abs() < 1e-15);
    }

    #[test]
    fn mean_speed_at_400k() {
        let oven = oven174(400.0);
        let atoms = sample_atoms(&oven, cat(), 100_000, 11).unwrap();
        let mean = atoms.iter().map(|a| a.velocity.norm()).sum::<f64>() / atoms.len() as f64;
        let vp = most_probable_speed(400.0, cat().isotope_mass(174), cat());
        let expected = quadrature_flux_mean(vp);
        assert!((mean / expected - 1.0).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn forward_flux_and_single_isotope() {
        let oven = oven174(500.0);
        let atoms = sample_atoms(&oven, cat(), 20_000, 3).unwrap();
        assert!(atoms.iter().all(|a| a.velocity.dot(&oven.axis) > 0.0));
        assert!(atoms.iter().all(|a| a.isotope == 174));
    }

    #[test]
    fn collimation_cone_and_aperture() {
        let oven = OvenConfig::default_for(cat());
        let atoms = sample_atoms(&oven, cat(), 50_000, 5).unwrap();
        let limit = oven.max_polar_angle();
        for a in &atoms {
            let cos = a.velocity.dot(&oven.axis) / a.velocity.norm();
            assert!(cos.clamp(-1.0, 1.0).acos() <= limit + 1e-12);
            assert!((a.position - oven.origin).norm() <= oven.bore_radius + 1e-15);
            assert!((a.position - oven.origin).dot(&oven.axis).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        let oven = OvenConfig::default_for(cat());
        assert!(matches!(sample_atoms(&oven, cat(), 0, 1), Err(SpotError::EmptySequence(_))));
        let cold = oven.clone().with_temperature(0.0);
        assert!(matches!(sample_atoms(&cold, cat(), 10, 1), Err(SpotError::Domain(_))));
        assert!(matches!(temperature_for_velocity(0.0, &oven.composition, cat()), Err(SpotError::Domain(_))));
        assert!(matches!(temperature_for_velocity(1.0e9, &oven.composition, cat()), Err(SpotError::Domain(_))));
    }

    #[test]
    fn determinism_is_independent_of_thread_count() {
        let oven = OvenConfig::default_for(cat());
        let a = sample_atoms(&oven, cat(), 10_000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sample_atoms(&oven, cat(), 10_000, 42).unwrap());
        assert_eq!(a, b);
        let c = sample_atoms(&oven, cat(), 10_000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn temperature_scaling() {
        let comp = Composition::single(174);
        let t1 = temperature_for_velocity(260.0, &comp, cat()).unwrap();
        let t2 = temperature_for_velocity(520.0, &comp, cat()).unwrap();
        assert!((t2 / t1 / 4.0 - 1.0).abs() < 0.01);
        // 260 m/s for 174Yb needs ≈ 400.3 K.
        assert!((t1 - 400.28).abs() < 0.1, "{t1}");
    }

    #[test]
    fn default_oven_reproduces_260() {
        let oven = OvenConfig::default_for(cat());
        let v = analytic_mean_axial_velocity(oven.temperature, &oven.composition, cat());
        assert!((v - 260.0).abs() < 0.01);
    }
}
