//! Laser-frequency scans over the spot images, resonance finding and isotope
//! shift extraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamsim::{sample_atoms, OvenConfig};
use crate::error::{Result, SpotError};
use crate::errormodel::{shift_sigma_for, ErrorBudget};
use crate::photonics::LaserState;
use crate::spotfield::{
    alignment, extract_centroids, pair_offsets, AlignmentResult, BeamGeometry, BeamPair, CrossingTable, FrameSpec,
    ImagePlane, PairOffsets, Spot,
};
use crate::ybdata::{Catalog, Composition, LineId, MERGE_WINDOW_HZ, MHZ};

/// A local minimum of perp_residual must sit at or below this fraction of the
/// lower of the maxima bounding it.
pub const PROMINENCE_RATIO: f64 = 0.5;

/// Minima closer than this many natural linewidths are one unresolved feature.
pub const RESOLUTION_LINEWIDTHS: f64 = 3.0;

/// Everything needed to render frames for a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSetup {
    pub oven: OvenConfig,
    pub beams: BeamGeometry,
    pub atoms_per_frame: usize,
    pub frame: FrameSpec,
}

impl ScanSetup {
    pub fn default_for(catalog: &Catalog) -> Self {
        ScanSetup {
            oven: OvenConfig::default_for(catalog),
            beams: BeamGeometry::default(),
            atoms_per_frame: 100_000,
            frame: FrameSpec::default(),
        }
    }

    pub fn with_angle(mut self, angle_deg: f64) -> Self {
        self.beams.angle_deg = angle_deg;
        self
    }

    pub fn with_composition(mut self, composition: Composition) -> Self {
        self.oven.composition = composition;
        self
    }

    pub fn with_atoms(mut self, n: usize) -> Self {
        self.atoms_per_frame = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.oven.validate()?;
        self.beams.validate()?;
        self.frame.validate()?;
        if self.atoms_per_frame == 0 {
            return Err(SpotError::Domain("atoms_per_frame must be >= 1".into()));
        }
        Ok(())
    }

    /// Sign of d(zigzag)/d(detuning) at a genuine Doppler-free resonance.
    /// Positive when the atoms moving perpendicular to the beams are inside
    /// the atomic beam; negative when only Lorentzian wings reach the spots.
    pub fn zigzag_sign(&self) -> f64 {
        let off_normal = (90.0 - self.beams.angle_deg).abs().to_radians();
        if off_normal < self.oven.max_polar_angle() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Detunings `start, start + step, …` up to and including `stop`.
pub fn detuning_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() || !start.is_finite() || !stop.is_finite() {
        return Err(SpotError::Domain("scan step must be positive and the range finite".into()));
    }
    if stop < start {
        return Err(SpotError::Domain(format!("scan range is reversed ({start} > {stop})")));
    }
    let span = stop - start;
    if span == 0.0 {
        return Ok(vec![start]);
    }
    if step > span {
        return Err(SpotError::Domain(format!("step {step} Hz exceeds the scan range {span} Hz")));
    }
    let n = (span / step * (1.0 + 1e-12)).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| start + i as f64 * step).collect();
    if stop - grid[n] > 1e-6 * step {
        grid.push(stop);
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairIntensity {
    pub pair24: f64,
    pub pair13: f64,
}

impl PairIntensity {
    pub fn get(&self, pair: BeamPair) -> f64 {
        match pair {
            BeamPair::Pair24 => self.pair24,
            BeamPair::Pair13 => self.pair13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Laser offset from the ¹⁷⁴Yb line, Hz.
    pub detuning: f64,
    /// `None` when fewer than three spots were found.
    pub alignment: Option<AlignmentResult>,
    pub pair_offsets: PairOffsets,
    pub pair_intensity: PairIntensity,
    pub total_intensity: f64,
}

impl ScanPoint {
    pub fn full_alignment(&self) -> Option<&AlignmentResult> {
        self.alignment.as_ref().filter(|a| a.spots_used == 4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTrace {
    /// Strictly increasing in detuning.
    pub points: Vec<ScanPoint>,
    pub angle_deg: f64,
    pub atoms_per_frame: usize,
    pub seed: u64,
    pub composition: Composition,
    pub zigzag_sign: f64,
    /// Absolute frequency of zero detuning, Hz.
    pub f_ref: f64,
}

impl ScanTrace {
    pub fn detunings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.detuning).collect()
    }

    /// Adds points from another trace of the same setup, keeping detunings unique and sorted.
    pub fn merge(&mut self, other: ScanTrace) {
        self.points.extend(other.points);
        self.points.sort_by(|a, b| a.detuning.total_cmp(&b.detuning));
        self.points.dedup_by(|a, b| (a.detuning - b.detuning).abs() < 1.0);
    }
}

/// Frames for one set of atoms, reused at every detuning so that scan points
/// differ only through the laser frequency.
pub struct Scanner<'a> {
    setup: ScanSetup,
    catalog: &'a Catalog,
    table: CrossingTable,
    seed: u64,
}

impl<'a> Scanner<'a> {
    pub fn new(setup: ScanSetup, catalog: &'a Catalog, seed: u64) -> Result<Self> {
        setup.validate()?;
        let atoms = sample_atoms(&setup.oven, catalog, setup.atoms_per_frame, seed)?;
        let beams = setup.beams.beams(&setup.oven)?;
        let table = CrossingTable::new(&atoms, &beams, ImagePlane::for_oven(&setup.oven), catalog)?;
        Ok(Scanner { setup, catalog, table, seed })
    }

    pub fn setup(&self) -> &ScanSetup {
        &self.setup
    }

    pub fn table(&self) -> &CrossingTable {
        &self.table
    }

    /// Renders one frame and measures it.
    pub fn point(&self, detuning: f64) -> Result<ScanPoint> {
        let mut spec = self.setup.frame.clone();
        if let Some(noise) = spec.shot_noise.as_mut() {
            noise.seed = point_seed(noise.seed ^ self.seed, detuning);
        }
        let frame = self.table.render(&LaserState::new(detuning)?, self.catalog, &spec)?;
        let spots = extract_centroids(&frame, self.table.beams());
        let align = match alignment(&spots, self.table.beams(), self.table.plane()) {
            Ok(a) => Some(a),
            Err(SpotError::InsufficientData(_)) => None,
            Err(e) => return Err(e),
        };
        let intensity = |pair: BeamPair| -> f64 {
            spots
                .iter()
                .filter(|s| pair.contains(s.beam_index()))
                .filter_map(Spot::centroid)
                .map(|c| c.total_intensity)
                .sum()
        };
        Ok(ScanPoint {
            detuning,
            alignment: align,
            pair_offsets: pair_offsets(&spots),
            pair_intensity: PairIntensity { pair24: intensity(BeamPair::Pair24), pair13: intensity(BeamPair::Pair13) },
            total_intensity: frame.total(),
        })
    }

    /// One point per detuning, in parallel; the result is sorted.
    pub fn scan(&self, detunings: &[f64]) -> Result<ScanTrace> {
        let mut points = detunings.par_iter().map(|&d| self.point(d)).collect::<Result<Vec<_>>>()?;
        points.sort_by(|a, b| a.detuning.total_cmp(&b.detuning));
        points.dedup_by(|a, b| (a.detuning - b.detuning).abs() < 1.0);
        Ok(ScanTrace {
            points,
            angle_deg: self.setup.beams.angle_deg,
            atoms_per_frame: self.setup.atoms_per_frame,
            seed: self.seed,
            composition: self.setup.oven.composition.clone(),
            zigzag_sign: self.setup.zigzag_sign(),
            f_ref: self.catalog.transition.f_ref,
        })
    }

    /// Coarse pass over `[start, stop]`, then fine windows around every
    /// coarse feature (perp_residual minimum or zigzag sign change).
    pub fn two_phase(&self, start: f64, stop: f64, plan: &TwoPhasePlan) -> Result<ScanTrace> {
        plan.validate()?;
        let mut trace = self.scan(&detuning_grid(start, stop, plan.coarse_step)?)?;
        let mut fine = Vec::new();
        for (lo, hi) in coarse_features(&trace) {
            let a = (lo - plan.window).max(start);
            let b = (hi + plan.window).min(stop);
            let first = (a / plan.fine_step).ceil() * plan.fine_step;
            let mut d = first;
            while d <= b {
                fine.push(d);
                d += plan.fine_step;
            }
        }
        fine.sort_by(f64::total_cmp);
        fine.dedup_by(|a, b| (*a - *b).abs() < 1.0);
        fine.retain(|d| !trace.points.iter().any(|p| (p.detuning - d).abs() < 1.0));
        if !fine.is_empty() {
            trace.merge(self.scan(&fine)?);
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPhasePlan {
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Half-width added either side of a coarse feature, Hz.
    pub window: f64,
}

impl Default for TwoPhasePlan {
    fn default() -> Self {
        TwoPhasePlan { coarse_step: 25.0 * MHZ, fine_step: 5.0 * MHZ, window: 40.0 * MHZ }
    }
}

impl TwoPhasePlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.coarse_step > 0.0 && self.fine_step > 0.0 && self.window >= 0.0) {
            return Err(SpotError::Domain("scan steps must be positive and the window >= 0".into()));
        }
        Ok(())
    }
}

fn point_seed(seed: u64, detuning: f64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ detuning.to_bits().rotate_left(17) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn coarse_features(trace: &ScanTrace) -> Vec<(f64, f64)> {
    let pts = &trace.points;
    let mut out = Vec::new();
    for i in 0..pts.len() {
        let Some(a) = pts[i].alignment.as_ref() else { continue };
        if let Some(b) = pts.get(i + 1).and_then(|p| p.alignment.as_ref()) {
            if a.zigzag.signum() != b.zigzag.signum() {
                out.push((pts[i].detuning, pts[i + 1].detuning));
            }
        }
        let left = i.checked_sub(1).and_then(|j| pts[j].alignment.as_ref());
        let right = pts.get(i + 1).and_then(|p| p.alignment.as_ref());
        if let (Some(l), Some(r)) = (left, right) {
            if a.perp_residual <= l.perp_residual && a.perp_residual < r.perp_residual {
                out.push((pts[i - 1].detuning, pts[i + 1].detuning));
            }
        }
    }
    out
}

/// A resonance located in a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    /// Absolute laser frequency, Hz.
    pub center: f64,
    pub width_fwhm: f64,
    /// Total fluorescence at the centre, arbitrary units.
    pub amplitude: f64,
    /// Catalog lines attributed to this peak, most abundant first.
    pub assigned_lines: Vec<LineId>,
    /// True iff more than one line is attributed.
    pub merged: bool,
}

impl PeakEstimate {
    pub fn contains(&self, id: &LineId) -> bool {
        self.assigned_lines.contains(id)
    }
}

/// Vertex abscissa of the parabola through three points.
pub(crate) fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<f64> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if !(a > 0.0) {
        return None;
    }
    let v = 0.5 * (x[0] + x[1]) - d1 / (2.0 * a);
    v.is_finite().then_some(v)
}

fn interp(x0: f64, y0: f64, x1: f64, y1: f64, y: f64) -> f64 {
    if y1 == y0 {
        0.5 * (x0 + x1)
    } else {
        x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    }
}

/// Walks away from `i` while values stay on the run of valid samples and
/// returns the interpolated abscissa where `ys` first crosses `level`
/// (rising for `rising = true`), or the last valid abscissa.
pub(crate) fn half_level_crossing(xs: &[f64], ys: &[Option<f64>], i: usize, level: f64, forward: bool, rising: bool) -> f64 {
    let mut j = i;
    loop {
        let next = if forward { j.checked_add(1).filter(|&k| k < xs.len()) } else { j.checked_sub(1) };
        let Some(k) = next else { return xs[j] };
        let (Some(yj), Some(yk)) = (ys[j], ys[k]) else { return xs[j] };
        let crossed = if rising { yk >= level } else { yk <= level };
        if crossed {
            return interp(xs[j], yj, xs[k], yk, level);
        }
        j = k;
    }
}

/// Each line present in `composition` goes to its nearest centre within the
/// merge window. Returns (weight, line) lists, heaviest first.
fn assign_lines(centers: &[f64], composition: &Composition, catalog: &Catalog) -> Vec<Vec<(f64, LineId)>> {
    let mut out: Vec<Vec<(f64, LineId)>> = vec![Vec::new(); centers.len()];
    for line in &catalog.lines {
        let weight = composition.fraction(line.mass_number) * line.strength;
        if weight <= 0.0 {
            continue;
        }
        let f = catalog.transition.f_ref + line.shift_from_174;
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (c - f).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((k, d)) = nearest {
            if d <= MERGE_WINDOW_HZ {
                out[k].push((weight, line.id()));
            }
        }
    }
    out.iter_mut().for_each(|v| sort_by_weight(v));
    out
}

fn sort_by_weight(v: &mut [(f64, LineId)]) {
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
}

/// Doppler-free resonances: prominent local minima of perp_residual with all
/// four spots present, where the zigzag crosses zero upward. Centres are
/// refined by a parabola through perp_residual², which is quadratic in
/// detuning near a resonance. Tilted traces go through `tilted_resonances`.
pub fn find_doppler_free_resonances(trace: &ScanTrace, catalog: &Catalog) -> Result<Vec<PeakEstimate>> {
    let pts = &trace.points;
    if pts.len() < 5 {
        return Err(SpotError::InsufficientData(format!("{} scan points, need at least 5", pts.len())));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.detuning).collect();
    let perp: Vec<Option<f64>> = pts.iter().map(|p| p.full_alignment().map(|a| a.perp_residual)).collect();
    if trace.zigzag_sign < 0.0 {
        let found = tilted_resonances(&xs, &perp, pts, catalog.transition.gamma_fwhm);
        return Ok(fold_features(found, trace.f_ref, &trace.composition, catalog));
    }
    let mut found = Vec::new();
    for i in 1..pts.len() - 1 {
        let (Some(l), Some(m), Some(r)) = (perp[i - 1], perp[i], perp[i + 1]) else { continue };
        if !(m <= l && m < r) {
            continue;
        }
        let zl = pts[i - 1].full_alignment().map(|a| a.zigzag).unwrap_or(0.0);
        let zr = pts[i + 1].full_alignment().map(|a| a.zigzag).unwrap_or(0.0);
        if !((zr - zl) * trace.zigzag_sign > 0.0) {
            continue;
        }
        let bound = |forward: bool| {
            let mut best = m;
            let mut j = i;
            loop {
                let next = if forward { (j + 1 < xs.len()).then_some(j + 1) } else { j.checked_sub(1) };
                let Some(k) = next else { break };
                match perp[k] {
                    Some(v) if v >= m => best = best.max(v),
                    _ => break,
                }
                j = k;
            }
            best
        };
        let floor = bound(false).min(bound(true));
        if !(m <= PROMINENCE_RATIO * floor) {
            continue;
        }
        let sq = [l * l, m * m, r * r];
        let x3 = [xs[i - 1], xs[i], xs[i + 1]];
        let center = parabola_vertex(x3, sq).filter(|v| *v > x3[0] && *v < x3[2]).unwrap_or(xs[i]);
        let half = 0.5 * floor;
        let lo = half_level_crossing(&xs, &perp, i, half, false, true);
        let hi = half_level_crossing(&xs, &perp, i, half, true, true);
        let mut width = hi - lo;
        if !(width > 0.0) {
            width = x3[2] - x3[0];
        }
        let k = if center < xs[i] { i - 1 } else { i };
        let amplitude = interp_value(xs[k], pts[k].total_intensity, xs[k + 1], pts[k + 1].total_intensity, center);
        found.push(Minimum { center, width, amplitude, depth_ratio: m / floor });
    }
    Ok(fold_features(found, trace.f_ref, &trace.composition, catalog))
}

/// With the beam-perpendicular velocity class outside the ballistic cone the
/// residual has a broad well around each line with shallow twin minima on
/// its flanks, and the zigzag changes sign several times inside it. The
/// line sits at the sign change nearest the middle of the well, taken
/// between the half-level crossings of the residual. Wells must reach below
/// the prominence ratio of the highest residual within the resolution on
/// either side.
fn tilted_resonances(xs: &[f64], perp: &[Option<f64>], pts: &[ScanPoint], gamma: f64) -> Vec<Minimum> {
    let reach = RESOLUTION_LINEWIDTHS * gamma;
    let zig: Vec<Option<f64>> = pts.iter().map(|p| p.full_alignment().map(|a| a.zigzag)).collect();
    // (crossing, lo, hi, residual there / floor, sample index)
    let mut cands: Vec<(f64, f64, f64, f64, usize)> = Vec::new();
    for j in 0..xs.len() - 1 {
        let (Some(z0), Some(z1), Some(p0), Some(p1)) = (zig[j], zig[j + 1], perp[j], perp[j + 1]) else { continue };
        if !((z0 < 0.0 && z1 >= 0.0) || (z0 >= 0.0 && z1 < 0.0)) {
            continue;
        }
        let x = interp(xs[j], z0, xs[j + 1], z1, 0.0);
        let m = interp_value(xs[j], p0, xs[j + 1], p1, x);
        let side_max = |range: &mut dyn Iterator<Item = usize>| {
            range.take_while(|&k| (xs[k] - x).abs() <= reach).filter_map(|k| perp[k]).fold(f64::NAN, f64::max)
        };
        let floor = side_max(&mut (0..=j).rev()).min(side_max(&mut (j + 1..xs.len())));
        if !(m <= PROMINENCE_RATIO * floor) {
            continue;
        }
        let lo = half_level_crossing(xs, perp, j, 0.5 * floor, false, true);
        let hi = half_level_crossing(xs, perp, j + 1, 0.5 * floor, true, true);
        cands.push((x, lo, hi, m / floor, j));
    }
    let mut found = Vec::new();
    let mut i = 0;
    while i < cands.len() {
        let (mut lo, mut hi) = (cands[i].1, cands[i].2);
        let mut k = i + 1;
        while k < cands.len() && cands[k].0 < hi {
            lo = lo.min(cands[k].1);
            hi = hi.max(cands[k].2);
            k += 1;
        }
        let mid = 0.5 * (lo + hi);
        let &(x, _, _, depth_ratio, j) = cands[i..k]
            .iter()
            .min_by(|a, b| (a.0 - mid).abs().total_cmp(&(b.0 - mid).abs()))
            .expect("non-empty group");
        let amplitude = interp_value(xs[j], pts[j].total_intensity, xs[j + 1], pts[j + 1].total_intensity, x);
        found.push(Minimum { center: x, width: hi - lo, amplitude, depth_ratio });
        i = k;
    }
    found
}

/// Assigns catalog lines to features (relative centres) and folds line-bearing
/// features closer than the resolution into single merged peaks.
pub(crate) fn fold_features(found: Vec<Minimum>, f_ref: f64, composition: &Composition, catalog: &Catalog) -> Vec<PeakEstimate> {
    let centers: Vec<f64> = found.iter().map(|f| f_ref + f.center).collect();
    let assigned = assign_lines(&centers, composition, catalog);
    let resolution = RESOLUTION_LINEWIDTHS * catalog.transition.gamma_fwhm;
    let mut peaks: Vec<(Minimum, Vec<(f64, LineId)>)> = Vec::new();
    let mut group: Vec<(Minimum, Vec<(f64, LineId)>)> = Vec::new();
    let flush = |group: &mut Vec<(Minimum, Vec<(f64, LineId)>)>, peaks: &mut Vec<_>| {
        if group.is_empty() {
            return;
        }
        let mins: Vec<Minimum> = group.iter().map(|g| g.0).collect();
        let mut lines: Vec<(f64, LineId)> = group.drain(..).flat_map(|g| g.1).collect();
        sort_by_weight(&mut lines);
        peaks.push((combine_unresolved(&mins), lines));
    };
    // Line-bearing minima closer than the resolution are one feature;
    // minima that explain no line pass through untouched.
    for (m, lines) in found.into_iter().zip(assigned) {
        if lines.is_empty() {
            peaks.push((m, lines));
            continue;
        }
        if group.last().is_some_and(|g| m.center - g.0.center >= resolution) {
            flush(&mut group, &mut peaks);
        }
        group.push((m, lines));
    }
    flush(&mut group, &mut peaks);
    peaks.sort_by(|a, b| a.0.center.total_cmp(&b.0.center));
    peaks
        .into_iter()
        .map(|(f, lines)| PeakEstimate {
            center: f_ref + f.center,
            width_fwhm: f.width,
            amplitude: f.amplitude,
            merged: lines.len() > 1,
            assigned_lines: lines.into_iter().map(|(_, id)| id).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Minimum {
    pub(crate) center: f64,
    pub(crate) width: f64,
    pub(crate) amplitude: f64,
    /// Residual at the minimum over the bounding maxima.
    pub(crate) depth_ratio: f64,
}

/// One feature from unresolved minima, centred at their fluorescence-weighted
/// mean; the width spans the group.
fn combine_unresolved(group: &[Minimum]) -> Minimum {
    if let [only] = group {
        return *only;
    }
    let weight: f64 = group.iter().map(|f| f.amplitude).sum();
    let center = group.iter().map(|f| f.center * f.amplitude).sum::<f64>() / weight;
    let lo = group.iter().map(|f| f.center - 0.5 * f.width).fold(f64::INFINITY, f64::min);
    let hi = group.iter().map(|f| f.center + 0.5 * f.width).fold(f64::NEG_INFINITY, f64::max);
    Minimum {
        center,
        width: hi - lo,
        amplitude: group.iter().map(|f| f.amplitude).fold(0.0, f64::max),
        depth_ratio: group.iter().map(|f| f.depth_ratio).fold(f64::INFINITY, f64::min),
    }
}

fn interp_value(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    if x1 == x0 {
        y0
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Detuning at which the chosen pair's spots line up with the reference axis
/// in a tilted geometry: the zero crossing of the pair's mean offset that
/// has the slope implied by the beam direction, where the pair is brightest.
/// Pair (2, 4) lands blue of the rest line at acute angles, pair (1, 3) red.
pub fn find_doppler_shifted_resonance(trace: &ScanTrace, pair: BeamPair, setup: &ScanSetup) -> Result<PeakEstimate> {
    if (trace.angle_deg - 90.0).abs() < 1e-9 {
        return Err(SpotError::DegeneratePair("at 90° both pairs align at the rest frequency".into()));
    }
    if trace.points.len() < 2 {
        return Err(SpotError::InsufficientData("need at least 2 scan points".into()));
    }
    let beams = setup.beams.beams(&setup.oven)?;
    let (e2, _) = setup.oven.transverse_basis();
    let dir = beams[pair.representative() as usize - 1].direction;
    let slope_sign = dir.dot(&e2).signum();
    let xs: Vec<f64> = trace.points.iter().map(|p| p.detuning).collect();
    let ys: Vec<Option<f64>> = trace.points.iter().map(|p| p.pair_offsets.get(pair)).collect();

    let mut best: Option<(f64, f64)> = None;
    for i in 0..xs.len() - 1 {
        let (Some(a), Some(b)) = (ys[i], ys[i + 1]) else { continue };
        if (b - a) * slope_sign <= 0.0 || a.signum() == b.signum() && a != 0.0 {
            continue;
        }
        let x = interp(xs[i], a, xs[i + 1], b, 0.0);
        let score = interp_value(xs[i], trace.points[i].pair_intensity.get(pair), xs[i + 1], trace.points[i + 1].pair_intensity.get(pair), x);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, x));
        }
    }
    let (_, center) = best.ok_or_else(|| SpotError::NotFound(format!("pair {pair:?} never crosses the reference axis")))?;

    let inten: Vec<Option<f64>> = trace.points.iter().map(|p| Some(p.pair_intensity.get(pair))).collect();
    let k = xs.partition_point(|&x| x <= center).clamp(1, xs.len() - 1);
    let amplitude = interp_value(xs[k - 1], trace.points[k - 1].pair_intensity.get(pair), xs[k], trace.points[k].pair_intensity.get(pair), center);
    let i = if (center - xs[k - 1]) < (xs[k] - center) { k - 1 } else { k };
    // width of the pair's fluorescence around the crossing
    let peak = inten[i].unwrap_or(0.0);
    let lo = half_level_crossing(&xs, &inten, i, 0.5 * peak, false, false);
    let hi = half_level_crossing(&xs, &inten, i, 0.5 * peak, true, false);
    let mut width_fwhm = hi - lo;
    if !(width_fwhm > 0.0) {
        width_fwhm = xs[k] - xs[k - 1];
    }
    Ok(PeakEstimate { center: trace.f_ref + center, width_fwhm, amplitude, assigned_lines: Vec::new(), merged: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub line: LineId,
    pub transition: String,
    /// Measured shift from the ¹⁷⁴Yb peak, Hz.
    pub shift: f64,
    pub sigma: f64,
    pub merged: bool,
    /// Injected ground truth, Hz.
    pub catalog_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTable {
    /// Absolute frequency of the ¹⁷⁴Yb peak, Hz.
    pub reference_center: f64,
    /// One row per assigned line, ordered by catalog position.
    pub rows: Vec<ShiftRow>,
}

impl ShiftTable {
    /// Rows other than the reference line itself.
    pub fn published_rows(&self) -> impl Iterator<Item = &ShiftRow> {
        self.rows.iter().filter(|r| !(r.line.mass_number == 174 && r.line.upper_f.is_none()))
    }

    pub fn row(&self, id: &LineId) -> Option<&ShiftRow> {
        self.rows.iter().find(|r| &r.line == id)
    }
}

/// Shifts of every assigned line relative to the peak holding ¹⁷⁴Yb, with
/// sigmas from the error budget.
pub fn extract_isotope_shifts(peaks: &[PeakEstimate], catalog: &Catalog, budget: &ErrorBudget) -> Result<ShiftTable> {
    let ref_id = catalog.reference_line().id();
    let reference = peaks
        .iter()
        .find(|p| p.contains(&ref_id))
        .ok_or_else(|| SpotError::ReferenceMissing("no peak is assigned to the 174 line".into()))?;
    let mut rows = Vec::new();
    for line in &catalog.lines {
        let id = line.id();
        let Some(peak) = peaks.iter().find(|p| p.contains(&id)) else { continue };
        rows.push(ShiftRow {
            transition: line.hyperfine_label.clone(),
            shift: peak.center - reference.center,
            sigma: shift_sigma_for(id == ref_id, !peak.merged, !reference.merged, budget),
            merged: peak.merged,
            catalog_shift: line.shift_from_174,
            line: id,
        });
    }
    Ok(ShiftTable { reference_center: reference.center, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rules() {
        assert_eq!(detuning_grid(5.0, 5.0, 1.0).unwrap(), vec![5.0]);
        assert_eq!(detuning_grid(0.0, 10.0, 2.5).unwrap(), vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        assert_eq!(detuning_grid(0.0, 10.0, 3.0).unwrap(), vec![0.0, 3.0, 6.0, 9.0, 10.0]);
        assert!(matches!(detuning_grid(0.0, 1.0, 2.0), Err(SpotError::Domain(_))));
        assert!(matches!(detuning_grid(1.0, 0.0, 0.5), Err(SpotError::Domain(_))));
        assert!(detuning_grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn parabola() {
        let v = parabola_vertex([0.0, 1.0, 3.0], [4.0, 1.0, 1.0]).unwrap();
        // y = (x - 2)^2 passes through (0,4),(1,1),(3,1)
        assert!((v - 2.0).abs() < 1e-12);
        assert!(parabola_vertex([0.0, 1.0, 2.0], [0.0, 1.0, 0.0]).is_none());
    }

    #[test]
    fn point_seeds_differ() {
        assert_ne!(point_seed(1, 0.0), point_seed(1, 5e6));
        assert_eq!(point_seed(1, 5e6), point_seed(1, 5e6));
    }

    #[test]
    fn assignment_merges_within_window() {
        let cat = Catalog::natural();
        let comp = cat.natural_composition();
        let f = |mhz: f64| cat.transition.f_ref + mhz * MHZ;
        let lines = assign_lines(&[f(0.0), f(546.0), f(1149.0)], comp, cat);
        assert_eq!(lines[0].len(), 1);
        assert_eq!(lines[0][0].1, LineId::boson(174));
        assert_eq!(lines[1].len(), 3);
        assert_eq!(lines[1][0].1, LineId::boson(172));
        assert_eq!(lines[2].len(), 2);
    }

    #[test]
    fn reference_missing() {
        let p = PeakEstimate { center: 1.0, width_fwhm: 1.0, amplitude: 1.0, assigned_lines: vec![LineId::boson(176)], merged: false };
        assert!(matches!(
            extract_isotope_shifts(&[p], Catalog::natural(), &ErrorBudget::default()),
            Err(SpotError::ReferenceMissing(_))
        ));
    }

    #[test]
    fn tilted_center_on_line() {
        let cat = Catalog::natural();
        for (angle, seed) in [(70.0, 3), (110.0, 4)] {
            let setup = ScanSetup::default_for(cat).with_composition(Composition::single(174)).with_atoms(50_000).with_angle(angle);
            let trace = Scanner::new(setup, cat, seed).unwrap().scan(&detuning_grid(-100e6, 100e6, 5e6).unwrap()).unwrap();
            let peaks = find_doppler_free_resonances(&trace, cat).unwrap();
            let p = peaks.iter().find(|p| p.contains(&LineId::boson(174))).expect("174 found");
            assert!((p.center - cat.transition.f_ref).abs() < 5.0 * MHZ, "{angle}: {}", (p.center - cat.transition.f_ref) / MHZ);
        }
    }
}
