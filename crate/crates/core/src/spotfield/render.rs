use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use super::{splat_into, FluorescenceFrame, FrameSpec, ImagePlane};
use crate::beamsim::AtomSample;
use crate::error::{Result, SpotError};
use crate::photonics::{detuning_for_velocity, rate, LaserBeam, LaserState, BEAM_CUTOFF_WAISTS};
use crate::ybdata::Catalog;

/// Crossings rendered per accumulation buffer. Fixed so that the merge order,
/// and hence every pixel value, does not depend on the thread count.
const CHUNK: usize = 32_768;

/// Geometry of one atom passing through one beam.
#[derive(Debug, Clone, Copy)]
struct Crossing {
    beam: u8,
    slot: u16,
    /// v·k̂, m/s.
    v_along: f64,
    /// Projected point of closest approach to the beam axis.
    center: Vector2<f64>,
    /// Projected displacement from the centre to the beam edge.
    sweep: Vector2<f64>,
    r_min2: f64,
    /// Half the time spent inside the cut-off radius, s.
    half_transit: f64,
}

/// Detuning-independent part of a frame: where every atom crosses every beam.
/// Build once per (atoms, beams) and render at many laser detunings.
#[derive(Debug, Clone)]
pub struct CrossingTable {
    crossings: Vec<Crossing>,
    /// Lines addressed by each isotope slot: (absolute frequency, strength).
    lines: Vec<Vec<(f64, f64)>>,
    beams: [LaserBeam; 4],
    plane: ImagePlane,
    atom_count: usize,
}

impl CrossingTable {
    pub fn new(atoms: &[AtomSample], beams: &[LaserBeam; 4], plane: ImagePlane, catalog: &Catalog) -> Result<Self> {
        if atoms.is_empty() {
            return Err(SpotError::Domain("cannot render a frame without atoms".into()));
        }
        for b in beams {
            b.validate()?;
        }
        let mut slots: BTreeMap<u16, u16> = BTreeMap::new();
        let mut lines = Vec::new();
        for a in atoms {
            if !slots.contains_key(&a.isotope) {
                let set: Vec<(f64, f64)> = catalog
                    .lines_of(a.isotope)
                    .map(|l| (catalog.transition.f_ref + l.shift_from_174, l.strength))
                    .collect();
                if set.is_empty() {
                    return Err(SpotError::NotFound(format!("no catalog line for isotope {}", a.isotope)));
                }
                slots.insert(a.isotope, lines.len() as u16);
                lines.push(set);
            }
        }
        let mut crossings = Vec::with_capacity(atoms.len() * 4);
        for a in atoms {
            let slot = slots[&a.isotope];
            for (bi, b) in beams.iter().enumerate() {
                let u = b.direction;
                let rel = a.position - b.origin;
                let perp = rel - u * rel.dot(&u);
                let v_along = a.velocity.dot(&u);
                let v_perp = a.velocity - u * v_along;
                let vp2 = v_perp.norm_squared();
                if vp2 == 0.0 {
                    continue;
                }
                let t_star = -perp.dot(&v_perp) / vp2;
                if t_star < 0.0 {
                    continue;
                }
                let r_min2 = (perp + v_perp * t_star).norm_squared();
                let edge2 = (BEAM_CUTOFF_WAISTS * b.waist_radius).powi(2);
                if r_min2 >= edge2 {
                    continue;
                }
                let half_transit = (edge2 - r_min2).sqrt() / vp2.sqrt();
                let closest = a.position + a.velocity * t_star;
                crossings.push(Crossing {
                    beam: bi as u8,
                    slot,
                    v_along,
                    center: plane.project(&closest),
                    sweep: plane.project_dir(&a.velocity) * half_transit,
                    r_min2,
                    half_transit,
                });
            }
        }
        Ok(CrossingTable { crossings, lines, beams: *beams, plane, atom_count: atoms.len() })
    }

    pub fn beams(&self) -> &[LaserBeam; 4] {
        &self.beams
    }

    pub fn plane(&self) -> &ImagePlane {
        &self.plane
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn crossing_count(&self) -> usize {
        self.crossings.len()
    }

    /// Renders the frame at one laser detuning.
    pub fn render(&self, state: &LaserState, catalog: &Catalog, spec: &FrameSpec) -> Result<FluorescenceFrame> {
        spec.validate()?;
        let mut frame = FluorescenceFrame::zeros(spec, self.plane);
        let (w, h) = (frame.width, frame.height);
        let gamma = catalog.transition.gamma_fwhm;
        let i_sat = catalog.transition.i_sat;
        let k = spec.path_samples;
        let xi: Vec<f64> = (0..k).map(|i| -1.0 + (2 * i + 1) as f64 / k as f64).collect();

        let buffers: Vec<Vec<f64>> = self
            .crossings
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut buf = vec![0.0; w * h];
                let mut deltas = Vec::with_capacity(4);
                for c in chunk {
                    let beam = &self.beams[c.beam as usize];
                    let waist2 = beam.waist_radius * beam.waist_radius;
                    let edge2 = BEAM_CUTOFF_WAISTS * BEAM_CUTOFF_WAISTS * waist2;
                    let s0 = beam.peak_intensity / i_sat;
                    deltas.clear();
                    deltas.extend(
                        self.lines[c.slot as usize]
                            .iter()
                            .map(|&(f, strength)| (detuning_for_velocity(c.v_along, state.detuning, f, catalog), strength)),
                    );
                    let dt = 2.0 * c.half_transit / k as f64;
                    for &x in &xi {
                        let r2 = c.r_min2 + (edge2 - c.r_min2) * x * x;
                        let s = s0 * (-2.0 * r2 / waist2).exp();
                        let r: f64 = deltas.iter().map(|&(d, strength)| strength * rate(d, s, gamma)).sum();
                        splat_into(&mut buf, w, h, spec.x_min, spec.y_min, spec.pixel_pitch, c.center + c.sweep * x, r * dt);
                    }
                }
                buf
            })
            .collect();
        for buf in buffers {
            for (p, v) in frame.pixels.iter_mut().zip(buf) {
                *p += v;
            }
        }

        if let Some(noise) = spec.shot_noise {
            if !(noise.photons_per_unit > 0.0) {
                return Err(SpotError::Domain("shot-noise scale must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            for p in frame.pixels.iter_mut() {
                let mean = *p * noise.photons_per_unit;
                if mean > 0.0 {
                    let draw: f64 = Poisson::new(mean).map_err(|e| SpotError::Numerical(e.to_string()))?.sample(&mut rng);
                    *p = draw / noise.photons_per_unit;
                }
            }
        }
        Ok(frame)
    }
}

/// Renders the four-spot image of `atoms` at laser detuning `state`.
///
/// Each atom deposits, along its path through each beam, the scattering rate
/// at its Doppler-shifted detuning and the local saturation parameter times
/// the time spent there.
pub fn render_frame(
    atoms: &[AtomSample],
    beams: &[LaserBeam; 4],
    state: &LaserState,
    catalog: &Catalog,
    spec: &FrameSpec,
    plane: ImagePlane,
) -> Result<FluorescenceFrame> {
    CrossingTable::new(atoms, beams, plane, catalog)?.render(state, catalog, spec)
}
