use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::FluorescenceFrame;
use crate::photonics::{LaserBeam, BEAM_CUTOFF_WAISTS};

/// A spot is reported only if its strip holds more than this fraction of the frame.
pub const CENTROID_MIN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotCentroid {
    pub beam_index: u8,
    /// Plane coordinates, m.
    pub centroid: Vector2<f64>,
    pub total_intensity: f64,
    /// Intensity-weighted RMS extent along x and y, m.
    pub rms_extent: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Spot {
    Found(SpotCentroid),
    Missing { beam_index: u8 },
}

impl Spot {
    pub fn beam_index(&self) -> u8 {
        match self {
            Spot::Found(c) => c.beam_index,
            Spot::Missing { beam_index } => *beam_index,
        }
    }

    pub fn centroid(&self) -> Option<&SpotCentroid> {
        match self {
            Spot::Found(c) => Some(c),
            Spot::Missing { .. } => None,
        }
    }
}

/// Intensity-weighted centroid of each beam's footprint strip (pixels within
/// the beam cut-off radius, plus one pixel, of the projected beam axis).
pub fn extract_centroids(frame: &FluorescenceFrame, beams: &[LaserBeam; 4]) -> [Spot; 4] {
    let total = frame.total();
    std::array::from_fn(|k| {
        let beam = &beams[k];
        let origin = frame.plane.project(&beam.origin);
        let dir = frame.plane.project_dir(&beam.direction);
        let missing = Spot::Missing { beam_index: beam.index };
        if !(total > 0.0) || dir.norm() == 0.0 {
            return missing;
        }
        let dir = dir.normalize();
        let half_width = BEAM_CUTOFF_WAISTS * beam.waist_radius + frame.pixel_pitch;
        let (mut m0, mut m1, mut m2) = (0.0, Vector2::zeros(), Vector2::zeros());
        for j in 0..frame.height {
            for i in 0..frame.width {
                let v = frame.get(i, j);
                if v == 0.0 {
                    continue;
                }
                let c = frame.pixel_center(i, j);
                let rel = c - origin;
                let dist = (rel - dir * rel.dot(&dir)).norm();
                if dist <= half_width {
                    m0 += v;
                    m1 += c * v;
                    m2 += c.component_mul(&c) * v;
                }
            }
        }
        if !(m0 > CENTROID_MIN_FRACTION * total) {
            return missing;
        }
        let mean = m1 / m0;
        let var = m2 / m0 - mean.component_mul(&mean);
        Spot::Found(SpotCentroid {
            beam_index: beam.index,
            centroid: mean,
            total_intensity: m0,
            rms_extent: var.map(|x| x.max(0.0).sqrt()),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamsim::OvenConfig;
    use crate::spotfield::{BeamGeometry, FrameSpec, ImagePlane};
    use crate::ybdata::Catalog;

    fn setup() -> (FluorescenceFrame, [LaserBeam; 4]) {
        let oven = OvenConfig::default_for(Catalog::natural());
        let beams = BeamGeometry::default().beams(&oven).unwrap();
        (FluorescenceFrame::zeros(&FrameSpec::default(), ImagePlane::for_oven(&oven)), beams)
    }

    #[test]
    fn blobs_at_known_positions() {
        let (mut frame, beams) = setup();
        let truth = [(0.004, 0.0003), (0.010, -0.0011), (0.016, 0.0), (0.022, 0.0017)];
        for &(x, y) in &truth {
            for (dx, dy, w) in [(0.0, 0.0, 4.0), (1e-4, 0.0, 1.0), (-1e-4, 0.0, 1.0), (0.0, 1e-4, 1.0), (0.0, -1e-4, 1.0)] {
                frame.splat(Vector2::new(x + dx, y + dy), w);
            }
        }
        let spots = extract_centroids(&frame, &beams);
        for (s, &(x, y)) in spots.iter().zip(&truth) {
            let c = s.centroid().expect("spot found");
            assert!((c.centroid.x - x).abs() < 0.5 * frame.pixel_pitch);
            assert!((c.centroid.y - y).abs() < 0.5 * frame.pixel_pitch);
            assert!(c.total_intensity > 0.0);
        }
    }

    #[test]
    fn zero_frame_has_no_spots() {
        let (frame, beams) = setup();
        let spots = extract_centroids(&frame, &beams);
        for (i, s) in spots.iter().enumerate() {
            assert_eq!(*s, Spot::Missing { beam_index: i as u8 + 1 });
        }
    }

    #[test]
    fn translation_by_two_pixels() {
        let (mut a, beams) = setup();
        let mut b = a.clone();
        let pitch = a.pixel_pitch;
        for (k, x) in [0.004, 0.010, 0.016, 0.022].into_iter().enumerate() {
            let y = 0.0002 * k as f64;
            a.splat(Vector2::new(x, y), 1.0);
            a.splat(Vector2::new(x + 3e-5, y + 7e-5), 0.5);
            b.splat(Vector2::new(x, y + 2.0 * pitch), 1.0);
            b.splat(Vector2::new(x + 3e-5, y + 7e-5 + 2.0 * pitch), 0.5);
        }
        let sa = extract_centroids(&a, &beams);
        let sb = extract_centroids(&b, &beams);
        for (p, q) in sa.iter().zip(&sb) {
            let shift = q.centroid().unwrap().centroid - p.centroid().unwrap().centroid;
            assert!((shift.y - 2.0 * pitch).abs() < 1e-12);
            assert!(shift.x.abs() < 1e-12);
        }
    }

    #[test]
    fn faint_strip_is_missing() {
        let (mut frame, beams) = setup();
        frame.splat(Vector2::new(0.004, 0.0), 1000.0);
        frame.splat(Vector2::new(0.010, 0.0), 1000.0);
        frame.splat(Vector2::new(0.016, 0.0), 1000.0);
        frame.splat(Vector2::new(0.022, 0.0), 1.0);
        let spots = extract_centroids(&frame, &beams);
        assert!(spots[2].centroid().is_some());
        assert_eq!(spots[3], Spot::Missing { beam_index: 4 });
    }
}
