//! Pump–probe saturated absorption on the atomic beam, by rate-equation hole
//! burning. Lamb dips appear where counter-propagating pump and probe address
//! the same transverse velocity class.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamsim::{sample_atoms, OvenConfig};
use crate::error::{Result, SpotError};
use crate::photonics::{rate, saturation_parameter, BEAM_CUTOFF_WAISTS};
use crate::spectro::{detuning_grid, fold_features, half_level_crossing, parabola_vertex, Minimum, PeakEstimate};
use crate::ybdata::{Catalog, Composition, MW_PER_CM2};

/// Dips shallower than this fraction of the deepest dip are ignored.
pub const DIP_MIN_RELATIVE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatConfig {
    /// W/m².
    pub pump_intensity: f64,
    /// W/m².
    pub probe_intensity: f64,
    pub pump_on: bool,
    /// Distance along the reference axis where pump and probe cross it, m.
    pub crossing: f64,
    /// 1/e² radius of both beams, m.
    pub waist_radius: f64,
    /// Scales the pump-induced ground-state depletion; 1 is the bare
    /// two-level saturation fraction.
    pub pump_efficiency: f64,
    pub atoms: usize,
    /// Gaussian noise, as a fraction of the peak background absorption.
    pub noise: Option<f64>,
}

impl Default for SatConfig {
    fn default() -> Self {
        SatConfig {
            pump_intensity: 127.0 * MW_PER_CM2,
            probe_intensity: 2.0 * MW_PER_CM2,
            pump_on: true,
            crossing: 0.010,
            waist_radius: 0.001,
            pump_efficiency: 1.0,
            atoms: 200_000,
            noise: None,
        }
    }
}

impl SatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_intensity >= 0.0 && self.probe_intensity >= 0.0) {
            return Err(SpotError::Domain("pump and probe intensities must be >= 0".into()));
        }
        if !(self.crossing > 0.0 && self.waist_radius > 0.0) {
            return Err(SpotError::Domain("crossing distance and waist must be positive".into()));
        }
        if !(self.pump_efficiency >= 0.0) {
            return Err(SpotError::Domain("pump efficiency must be >= 0".into()));
        }
        if self.atoms == 0 {
            return Err(SpotError::EmptySequence("at least one atom is needed".into()));
        }
        if let Some(n) = self.noise {
            if !(n >= 0.0) {
                return Err(SpotError::Domain(format!("noise fraction must be >= 0, got {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample {
    /// Offset from the ¹⁷⁴Yb line, Hz.
    pub detuning: f64,
    pub absorption: f64,
    /// Pump-off absorption at the same seed; absent for pump-off runs.
    pub background: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub samples: Vec<SpectrumSample>,
    pub config: SatConfig,
    pub f_ref: f64,
    pub composition: Composition,
    pub seed: u64,
}

impl Spectrum {
    pub fn detunings(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.detuning).collect()
    }
}

/// One atom on one line, as seen by the probe.
struct Absorber {
    /// Line frequency minus f_ref, Hz.
    line_offset: f64,
    /// (f_line/c)·v·k̂_probe, Hz.
    doppler: f64,
    weight: f64,
}

fn absorbers(config: &SatConfig, oven: &OvenConfig, catalog: &Catalog, seed: u64) -> Result<Vec<Absorber>> {
    let atoms = sample_atoms(oven, catalog, config.atoms, seed)?;
    let (e2, e3) = oven.transverse_basis();
    let cut = BEAM_CUTOFF_WAISTS * config.waist_radius;
    let mut out = Vec::new();
    for atom in &atoms {
        let va = atom.velocity.dot(&oven.axis);
        if !(va > 0.0) {
            continue;
        }
        let rel: Vector3<f64> = atom.position - oven.origin;
        let t = (config.crossing - rel.dot(&oven.axis)) / va;
        let r = (rel + atom.velocity * t).dot(&e3);
        if r.abs() > cut {
            continue;
        }
        // Local density goes as 1/v_axial; the probe samples the beam along e2.
        let w = (-2.0 * (r / config.waist_radius).powi(2)).exp() / va;
        let vt = atom.velocity.dot(&e2);
        for line in catalog.lines_of(atom.isotope) {
            let f_line = catalog.transition.f_ref + line.shift_from_174;
            out.push(Absorber {
                line_offset: line.shift_from_174,
                doppler: f_line / catalog.constants.c * vt,
                weight: w * line.strength,
            });
        }
    }
    Ok(out)
}

fn absorption_at(abs: &[Absorber], detuning: f64, s_probe: f64, s_pump: f64, depletion: f64, gamma: f64) -> f64 {
    // Normalised so that an on-resonance absorber at zero probe power counts 1.
    let norm = 2.0 / (std::f64::consts::PI * gamma * s_probe.max(1e-12));
    abs.iter()
        .map(|a| {
            let d0 = detuning - a.line_offset;
            let probe = rate(d0 - a.doppler, s_probe.max(1e-12), gamma) * norm;
            let hole = if depletion > 0.0 {
                let x = 2.0 * (d0 + a.doppler) / gamma;
                (depletion * s_pump / (1.0 + s_pump + x * x)).min(1.0)
            } else {
                0.0
            };
            a.weight * probe * (1.0 - hole)
        })
        .sum()
}

/// Probe absorption over a detuning scan. With the pump on, a pump-off
/// background from the same atom sample is stored beside each point.
pub fn simulate_spectrum(
    config: &SatConfig,
    oven: &OvenConfig,
    catalog: &Catalog,
    start: f64,
    stop: f64,
    step: f64,
    seed: u64,
) -> Result<Spectrum> {
    config.validate()?;
    if !(step > 0.0) {
        return Err(SpotError::Domain(format!("scan step must be positive, got {step}")));
    }
    let grid = detuning_grid(start, stop, step)?;
    let abs = absorbers(config, oven, catalog, seed)?;
    let gamma = catalog.transition.gamma_fwhm;
    let s_probe = saturation_parameter(config.probe_intensity, &catalog.transition)?;
    let s_pump = saturation_parameter(config.pump_intensity, &catalog.transition)?;
    let depletion = if config.pump_on { config.pump_efficiency } else { 0.0 };

    let mut samples: Vec<SpectrumSample> = grid
        .par_iter()
        .map(|&d| {
            let signal = absorption_at(&abs, d, s_probe, s_pump, depletion, gamma);
            let background = config.pump_on.then(|| absorption_at(&abs, d, s_probe, s_pump, 0.0, gamma));
            SpectrumSample { detuning: d, absorption: signal, background }
        })
        .collect();

    if let Some(frac) = config.noise.filter(|n| *n > 0.0) {
        let scale = frac * samples.iter().map(|s| s.background.unwrap_or(s.absorption)).fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a7_5bec);
        for s in &mut samples {
            let z: f64 = StandardNormal.sample(&mut rng);
            s.absorption = (s.absorption + scale * z).max(0.0);
            if let Some(b) = s.background.as_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *b = (*b + scale * z).max(0.0);
            }
        }
    }
    Ok(Spectrum { samples, config: config.clone(), f_ref: catalog.transition.f_ref, composition: oven.composition.clone(), seed })
}

/// Lamb dips of (background − signal), folded into features like the spot
/// resonances. A flat difference gives an empty list.
pub fn extract_dips(spectrum: &Spectrum, catalog: &Catalog) -> Result<Vec<PeakEstimate>> {
    if !spectrum.config.pump_on {
        return Err(SpotError::Precondition("dips need a pump-on spectrum".into()));
    }
    let dip: Vec<f64> = spectrum
        .samples
        .iter()
        .map(|s| {
            s.background
                .map(|b| b - s.absorption)
                .ok_or_else(|| SpotError::Precondition("spectrum has no pump-off background".into()))
        })
        .collect::<Result<_>>()?;
    let xs = spectrum.detunings();
    if xs.len() < 3 {
        return Err(SpotError::InsufficientData(format!("{} spectrum points, need at least 3", xs.len())));
    }
    let top = dip.iter().cloned().fold(0.0, f64::max);
    let bg_top = spectrum.samples.iter().filter_map(|s| s.background).fold(0.0, f64::max);
    let mut floor = (DIP_MIN_RELATIVE * top).max(1e-9 * bg_top);
    if let Some(n) = spectrum.config.noise {
        floor = floor.max(3.0 * n * bg_top);
    }
    if !(top > floor) {
        return Ok(Vec::new());
    }

    let opt: Vec<Option<f64>> = dip.iter().map(|&d| Some(d)).collect();
    let mut found = Vec::new();
    for i in 1..xs.len() - 1 {
        let (l, m, r) = (dip[i - 1], dip[i], dip[i + 1]);
        if !(m >= l && m > r) {
            continue;
        }
        let base = |forward: bool| {
            let mut low = m;
            let mut j = i;
            loop {
                let next = if forward { (j + 1 < xs.len()).then_some(j + 1) } else { j.checked_sub(1) };
                let Some(k) = next else { break };
                if dip[k] > m {
                    break;
                }
                low = low.min(dip[k]);
                j = k;
            }
            low
        };
        let prominence = m - base(false).max(base(true));
        if !(prominence > floor) {
            continue;
        }
        let x3 = [xs[i - 1], xs[i], xs[i + 1]];
        let center = parabola_vertex(x3, [-l, -m, -r]).filter(|v| *v > x3[0] && *v < x3[2]).unwrap_or(xs[i]);
        let lo = half_level_crossing(&xs, &opt, i, 0.5 * m, false, false);
        let hi = half_level_crossing(&xs, &opt, i, 0.5 * m, true, false);
        let width = if hi > lo { hi - lo } else { x3[2] - x3[0] };
        found.push(Minimum { center, width, amplitude: m, depth_ratio: 1.0 - prominence / m });
    }
    Ok(fold_features(found, spectrum.f_ref, &spectrum.composition, catalog))
}

/// Interquartile span of the pump-off (Doppler) profile, Hz: the distance
/// between the 25% and 75% points of its cumulative area. Unlike the FWHM it
/// does not depend on how sharply the line shape rounds the profile's apex.
pub fn background_width(spectrum: &Spectrum) -> Result<f64> {
    let xs = spectrum.detunings();
    let ys: Vec<f64> = spectrum.samples.iter().map(|s| s.background.unwrap_or(s.absorption)).collect();
    if xs.len() < 2 {
        return Err(SpotError::InsufficientData("need at least 2 spectrum points".into()));
    }
    let mut cum = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cum[i] = cum[i - 1] + 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = cum[xs.len() - 1];
    if !(total > 0.0) {
        return Err(SpotError::NotFound("spectrum has no absorption".into()));
    }
    let quantile = |q: f64| {
        let target = q * total;
        let k = cum.partition_point(|&c| c < target).clamp(1, xs.len() - 1);
        let (c0, c1) = (cum[k - 1], cum[k]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        xs[k - 1] + t * (xs[k] - xs[k - 1])
    };
    Ok(quantile(0.75) - quantile(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ybdata::{LineId, MHZ};

    fn single(a: u16) -> OvenConfig {
        OvenConfig::default_for(Catalog::natural()).with_composition(Composition::single(a))
    }

    fn quick() -> SatConfig {
        SatConfig { atoms: 20_000, ..SatConfig::default() }
    }

    #[test]
    fn single_line_dip_on_line() {
        let cat = Catalog::natural();
        let sp = simulate_spectrum(&quick(), &single(176), cat, -700.0 * MHZ, -300.0 * MHZ, 2.0 * MHZ, 3).unwrap();
        assert!(sp.samples.iter().all(|s| s.absorption >= 0.0));
        let dips = extract_dips(&sp, cat).unwrap();
        assert_eq!(dips.len(), 1, "{dips:?}");
        let line = cat.frequency_of("176").unwrap();
        assert!((dips[0].center - line).abs() < 5.0 * MHZ, "{}", (dips[0].center - line) / MHZ);
        assert!(dips[0].contains(&LineId::boson(176)));
    }

    #[test]
    fn pump_off_is_smooth_and_rejected() {
        let cat = Catalog::natural();
        let cfg = SatConfig { pump_on: false, ..quick() };
        let sp = simulate_spectrum(&cfg, &single(174), cat, -200.0 * MHZ, 200.0 * MHZ, 2.0 * MHZ, 3).unwrap();
        let a: Vec<f64> = sp.samples.iter().map(|s| s.absorption).collect();
        let minima = (1..a.len() - 1).filter(|&i| a[i] < a[i - 1] && a[i] < a[i + 1]).count();
        assert_eq!(minima, 0);
        assert!(matches!(extract_dips(&sp, cat), Err(SpotError::Precondition(_))));
    }

    #[test]
    fn flat_difference_has_no_dips() {
        let cat = Catalog::natural();
        let samples = (0..50)
            .map(|i| SpectrumSample { detuning: i as f64 * MHZ, absorption: 1.0, background: Some(1.0) })
            .collect();
        let sp = Spectrum { samples, config: SatConfig::default(), f_ref: cat.transition.f_ref, composition: Composition::single(174), seed: 0 };
        assert!(extract_dips(&sp, cat).unwrap().is_empty());
        let mut missing = sp.clone();
        missing.samples[3].background = None;
        assert!(matches!(extract_dips(&missing, cat), Err(SpotError::Precondition(_))));
    }

    #[test]
    fn contrast_grows_with_pump() {
        let cat = Catalog::natural();
        let depth = |pump_mw: f64| {
            let cfg = SatConfig { pump_intensity: pump_mw * MW_PER_CM2, ..quick() };
            let sp = simulate_spectrum(&cfg, &single(174), cat, -60.0 * MHZ, 60.0 * MHZ, 2.0 * MHZ, 5).unwrap();
            extract_dips(&sp, cat).unwrap()[0].amplitude
        };
        let d = [depth(20.0), depth(60.0), depth(127.0)];
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn doppler_width_scales_with_sqrt_t() {
        let cat = Catalog::natural().with_linewidth(0.5 * MHZ);
        let cfg = SatConfig { pump_on: false, atoms: 100_000, ..SatConfig::default() };
        let width = |t: f64| {
            let oven = single(174).with_temperature(t);
            background_width(&simulate_spectrum(&cfg, &oven, &cat, -200.0 * MHZ, 200.0 * MHZ, 0.5 * MHZ, 8).unwrap()).unwrap()
        };
        let (w1, w3) = (width(400.0), width(1200.0));
        let ratio = w3 / w1;
        assert!((ratio / 3f64.sqrt() - 1.0).abs() < 0.03, "ratio {ratio}");
    }
}
