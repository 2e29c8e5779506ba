use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{ImagePlane, Spot};
use crate::error::{Result, SpotError};
use crate::photonics::LaserBeam;

/// The two co-propagating beam pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamPair {
    /// Beams 2 and 4 (acute angle to the reference axis when tilted).
    Pair24,
    /// Beams 1 and 3.
    Pair13,
}

impl BeamPair {
    pub fn contains(&self, beam_index: u8) -> bool {
        match self {
            BeamPair::Pair24 => beam_index % 2 == 0,
            BeamPair::Pair13 => beam_index % 2 == 1,
        }
    }

    pub fn representative(&self) -> u8 {
        match self {
            BeamPair::Pair24 => 2,
            BeamPair::Pair13 => 1,
        }
    }
}

impl std::str::FromStr for BeamPair {
    type Err = SpotError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "24" | "2,4" | "2&4" | "pair24" => Ok(BeamPair::Pair24),
            "13" | "1,3" | "1&3" | "pair13" => Ok(BeamPair::Pair13),
            other => Err(SpotError::Config(format!("unknown beam pair '{other}', expected 24 or 13"))),
        }
    }
}

/// Mean signed distance of each pair's spots from the reference axis, m.
/// Positive is along the plane's `e2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOffsets {
    pub pair24: Option<f64>,
    pub pair13: Option<f64>,
}

impl PairOffsets {
    pub fn get(&self, pair: BeamPair) -> Option<f64> {
        match pair {
            BeamPair::Pair24 => self.pair24,
            BeamPair::Pair13 => self.pair13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// RMS perpendicular distance of the centroids from their total-least-squares line, m.
    pub perp_residual: f64,
    /// Angle between that line and the projected beams, rad in [0, π/2].
    pub line_angle_to_beams: f64,
    /// Angle between that line and the reference axis, rad in [0, π/2].
    pub line_angle_to_axis: f64,
    pub pair_axis_offsets: PairOffsets,
    /// Signed zig-zag: mean distance of spots 1, 3 from the fitted line minus
    /// that of spots 2, 4, measured along the normal pointing with beam 1.
    /// Crosses zero upward as the laser tunes through a Doppler-free resonance.
    pub zigzag: f64,
    pub spots_used: usize,
}

/// Pair offsets from whichever spots were found; needs no other pair.
pub fn pair_offsets(spots: &[Spot; 4]) -> PairOffsets {
    let mean_y = |pair: BeamPair| {
        let v: Vec<f64> = spots
            .iter()
            .filter_map(Spot::centroid)
            .filter(|c| pair.contains(c.beam_index))
            .map(|c| c.centroid.y)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    PairOffsets { pair24: mean_y(BeamPair::Pair24), pair13: mean_y(BeamPair::Pair13) }
}

fn fold_angle(a: f64) -> f64 {
    let a = a.abs() % std::f64::consts::PI;
    a.min(std::f64::consts::PI - a)
}

/// Fits a line through the spot centroids and measures how well they align.
pub fn alignment(spots: &[Spot; 4], beams: &[LaserBeam; 4], plane: &ImagePlane) -> Result<AlignmentResult> {
    let found: Vec<_> = spots.iter().filter_map(Spot::centroid).collect();
    if found.len() < 3 {
        return Err(SpotError::InsufficientData(format!("{} spots found, need at least 3", found.len())));
    }
    let n = found.len() as f64;
    let mean = found.iter().map(|c| c.centroid).sum::<Vector2<f64>>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for c in &found {
        let d = c.centroid - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = Vector2::new(phi.cos(), phi.sin());
    let mut normal = Vector2::new(-phi.sin(), phi.cos());
    let beam1 = plane.project_dir(&beams[0].direction);
    if normal.dot(&beam1) < 0.0 {
        normal = -normal;
    }
    let dist = |c: &Vector2<f64>| normal.dot(&(c - mean));
    let perp_residual = (found.iter().map(|c| dist(&c.centroid).powi(2)).sum::<f64>() / n).sqrt();

    let beam_dir = beam1.try_normalize(0.0).unwrap_or_else(Vector2::y);
    let line_angle_to_beams = dir.dot(&beam_dir).abs().clamp(0.0, 1.0).acos();
    let line_angle_to_axis = fold_angle(phi);

    let pair_mean = |pair: BeamPair| {
        let v: Vec<f64> = found.iter().filter(|c| pair.contains(c.beam_index)).map(|c| dist(&c.centroid)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let pair_axis_offsets = pair_offsets(spots);
    let zigzag = pair_mean(BeamPair::Pair13).unwrap_or(0.0) - pair_mean(BeamPair::Pair24).unwrap_or(0.0);

    Ok(AlignmentResult {
        perp_residual,
        line_angle_to_beams,
        line_angle_to_axis,
        pair_axis_offsets,
        zigzag,
        spots_used: found.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamsim::OvenConfig;
    use crate::spotfield::{BeamGeometry, SpotCentroid};
    use crate::ybdata::Catalog;

    fn spot(i: u8, x: f64, y: f64) -> Spot {
        Spot::Found(SpotCentroid {
            beam_index: i,
            centroid: Vector2::new(x, y),
            total_intensity: 1.0,
            rms_extent: Vector2::zeros(),
        })
    }

    fn setup() -> ([LaserBeam; 4], ImagePlane) {
        let oven = OvenConfig::default_for(Catalog::natural());
        (BeamGeometry::default().beams(&oven).unwrap(), ImagePlane::for_oven(&oven))
    }

    #[test]
    fn collinear_on_axis() {
        let (beams, plane) = setup();
        let spots = [spot(1, 0.004, 0.0), spot(2, 0.010, 0.0), spot(3, 0.016, 0.0), spot(4, 0.022, 0.0)];
        let a = alignment(&spots, &beams, &plane).unwrap();
        assert!(a.perp_residual < 1e-15);
        assert!(a.line_angle_to_axis < 1e-12);
        assert!((a.line_angle_to_beams - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(a.pair_axis_offsets.pair24, Some(0.0));
    }

    #[test]
    fn zigzag_sign_and_pair_offsets() {
        let (beams, plane) = setup();
        let d = 1e-4;
        let spots = [spot(1, 0.004, d), spot(2, 0.010, -d), spot(3, 0.016, d), spot(4, 0.022, -d)];
        let a = alignment(&spots, &beams, &plane).unwrap();
        assert!(a.zigzag > 0.0);
        assert!(a.pair_axis_offsets.pair13.unwrap() > 0.0);
        assert!(a.pair_axis_offsets.pair24.unwrap() < 0.0);
        assert!((a.perp_residual - d).abs() < 2e-5);
    }

    #[test]
    fn needs_three_spots() {
        let (beams, plane) = setup();
        let spots = [spot(1, 0.004, 0.0), Spot::Missing { beam_index: 2 }, spot(3, 0.016, 0.0), Spot::Missing { beam_index: 4 }];
        assert!(matches!(alignment(&spots, &beams, &plane), Err(SpotError::InsufficientData(_))));
        let three = [spot(1, 0.004, 0.0), Spot::Missing { beam_index: 2 }, spot(3, 0.016, 0.0), spot(4, 0.022, 0.0)];
        assert_eq!(alignment(&three, &beams, &plane).unwrap().spots_used, 3);
    }

    #[test]
    fn tilted_line_angle() {
        let (beams, plane) = setup();
        let t = 0.1f64;
        let spots: [Spot; 4] = std::array::from_fn(|i| {
            let x = 0.004 + 0.006 * i as f64;
            spot(i as u8 + 1, x, x * t.tan())
        });
        let a = alignment(&spots, &beams, &plane).unwrap();
        assert!((a.line_angle_to_axis - t).abs() < 1e-9);
        assert!(a.perp_residual < 1e-15);
    }
}
