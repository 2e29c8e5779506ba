//! Fluorescence-spot imaging: four laser beams cross the atomic beam, each
//! crossing glows where atoms are Doppler-shifted onto resonance, and a camera
//! looking down on the beam plane records the spots.
//!
//! Coordinates on the image plane are (x, y) in metres with the origin at the
//! oven aperture, x along the reference axis and y the in-plane transverse
//! direction.

mod align;
mod centroid;
mod render;

pub use align::{alignment, pair_offsets, AlignmentResult, BeamPair, PairOffsets};
pub use centroid::{extract_centroids, Spot, SpotCentroid, CENTROID_MIN_FRACTION};
pub use render::{render_frame, CrossingTable};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::beamsim::OvenConfig;
use crate::error::{Result, SpotError};
use crate::photonics::LaserBeam;
use crate::ybdata::MW_PER_CM2;

/// Layout of the four spot beams relative to the oven.
///
/// Beams 1 and 3 propagate one way and beams 2 and 4 the other, so each of
/// (1, 2), (2, 3), (3, 4) is a counter-propagating neighbour pair. `angle_deg`
/// is the angle between the reference axis and the propagation direction of
/// beams 2 and 4; beams 1 and 3 make the supplementary angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub angle_deg: f64,
    /// Distance along the reference axis at which beam i crosses it, m.
    pub crossings: [f64; 4],
    /// 1/e² radius, m.
    pub waist_radius: f64,
    /// Peak intensity of each beam, W/m².
    pub peak_intensity: f64,
}

impl Default for BeamGeometry {
    fn default() -> Self {
        BeamGeometry {
            angle_deg: 90.0,
            crossings: [0.004, 0.010, 0.016, 0.022],
            waist_radius: 0.000_5,
            peak_intensity: 4.5 * MW_PER_CM2,
        }
    }
}

impl BeamGeometry {
    pub fn with_angle(mut self, angle_deg: f64) -> Self {
        self.angle_deg = angle_deg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.angle_deg > 0.0 && self.angle_deg < 180.0) {
            return Err(SpotError::Domain(format!("beam angle must lie in (0, 180) degrees, got {}", self.angle_deg)));
        }
        if !(self.waist_radius > 0.0) || !(self.peak_intensity >= 0.0) {
            return Err(SpotError::Domain("beam waist must be positive and intensity non-negative".into()));
        }
        if self.crossings.windows(2).any(|w| !(w[1] > w[0])) || !(self.crossings[0] > 0.0) {
            return Err(SpotError::Domain("beam crossings must be positive and increasing".into()));
        }
        Ok(())
    }

    /// Builds the four beams for an oven.
    pub fn beams(&self, oven: &OvenConfig) -> Result<[LaserBeam; 4]> {
        self.validate()?;
        let (e2, _) = oven.transverse_basis();
        let th = self.angle_deg.to_radians();
        let even = oven.axis * th.cos() - e2 * th.sin();
        Ok(std::array::from_fn(|i| {
            let index = i as u8 + 1;
            LaserBeam {
                index,
                origin: oven.origin + oven.axis * self.crossings[i],
                direction: if index % 2 == 0 { even } else { -even },
                waist_radius: self.waist_radius,
                peak_intensity: self.peak_intensity,
            }
        }))
    }
}

/// Camera plane: origin on the reference axis, `e1` along it, `e2` the
/// in-plane transverse direction. Projection is orthographic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane {
    pub origin: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl ImagePlane {
    pub fn for_oven(oven: &OvenConfig) -> Self {
        let (e2, _) = oven.transverse_basis();
        ImagePlane { origin: oven.origin, e1: oven.axis, e2 }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let r = p - self.origin;
        Vector2::new(r.dot(&self.e1), r.dot(&self.e2))
    }

    pub fn project_dir(&self, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(v.dot(&self.e1), v.dot(&self.e2))
    }
}

/// Optional Poisson shot noise: each pixel becomes Poisson(value × scale)/scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoise {
    pub photons_per_unit: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// m/pixel.
    pub pixel_pitch: f64,
    /// Samples per beam transit.
    pub path_samples: usize,
    pub shot_noise: Option<ShotNoise>,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            x_min: -0.002,
            x_max: 0.026,
            y_min: -0.004,
            y_max: 0.004,
            pixel_pitch: 50.0e-6,
            path_samples: 8,
            shot_noise: None,
        }
    }
}

impl FrameSpec {
    pub fn dims(&self) -> (usize, usize) {
        let w = ((self.x_max - self.x_min) / self.pixel_pitch).round() as usize;
        let h = ((self.y_max - self.y_min) / self.pixel_pitch).round() as usize;
        (w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch > 0.0) || !(self.x_max > self.x_min) || !(self.y_max > self.y_min) {
            return Err(SpotError::Domain("frame extent and pixel pitch must be positive".into()));
        }
        let (w, h) = self.dims();
        if w == 0 || h == 0 || w * h > 16_000_000 {
            return Err(SpotError::Domain(format!("frame of {w}×{h} pixels is not usable")));
        }
        if self.path_samples == 0 {
            return Err(SpotError::Domain("path_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rendered camera image. Row-major, `height` rows of `width` pixels; pixel
/// (i, j) is centred at (x_min + (i + ½)·pitch, y_min + (j + ½)·pitch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub pixel_pitch: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub plane: ImagePlane,
}

impl FluorescenceFrame {
    pub fn zeros(spec: &FrameSpec, plane: ImagePlane) -> Self {
        let (width, height) = spec.dims();
        FluorescenceFrame {
            width,
            height,
            pixels: vec![0.0; width * height],
            pixel_pitch: spec.pixel_pitch,
            x_min: spec.x_min,
            y_min: spec.y_min,
            plane,
        }
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> Vector2<f64> {
        Vector2::new(
            self.x_min + (i as f64 + 0.5) * self.pixel_pitch,
            self.y_min + (j as f64 + 0.5) * self.pixel_pitch,
        )
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[j * self.width + i]
    }

    pub fn total(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Bilinear deposit; preserves the first moment for deposits away from the edges.
    pub fn splat(&mut self, p: Vector2<f64>, weight: f64) {
        splat_into(&mut self.pixels, self.width, self.height, self.x_min, self.y_min, self.pixel_pitch, p, weight);
    }

    /// Block-averaged copy with at most `max_side` pixels per side.
    pub fn downsample(&self, max_side: usize) -> FluorescenceFrame {
        let factor = self.width.max(self.height).div_ceil(max_side.max(1)).max(1);
        let (w, h) = (self.width.div_ceil(factor), self.height.div_ceil(factor));
        let mut pixels = vec![0.0; w * h];
        for j in 0..self.height {
            for i in 0..self.width {
                pixels[(j / factor) * w + i / factor] += self.get(i, j);
            }
        }
        let norm = (factor * factor) as f64;
        pixels.iter_mut().for_each(|p| *p /= norm);
        FluorescenceFrame {
            width: w,
            height: h,
            pixels,
            pixel_pitch: self.pixel_pitch * factor as f64,
            x_min: self.x_min,
            y_min: self.y_min,
            plane: self.plane,
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn splat_into(
    pixels: &mut [f64],
    width: usize,
    height: usize,
    x_min: f64,
    y_min: f64,
    pitch: f64,
    p: Vector2<f64>,
    weight: f64,
) {
    let fx = (p.x - x_min) / pitch - 0.5;
    let fy = (p.y - y_min) / pitch - 0.5;
    let (ix, iy) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - ix, fy - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
        for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
            let (x, y) = (ix + dx, iy + dy);
            if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                pixels[y as usize * width + x as usize] += weight * wx * wy;
            }
        }
    }
}
