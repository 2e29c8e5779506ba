//! TOML run configuration for the command-line experiments. Units are the
//! ones a bench operator would quote (MHz, mm, mW/cm²).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamsim::{temperature_for_velocity, OvenConfig};
use crate::dopplerfit::DEFAULT_ANGLES_DEG;
use crate::error::{Result, SpotError};
use crate::errormodel::ErrorBudget;
use crate::satspec::SatConfig;
use crate::spectro::{ScanSetup, TwoPhasePlan};
use crate::spotfield::{BeamGeometry, FrameSpec};
use crate::ybdata::{Catalog, Composition, MHZ, MW_PER_CM2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub catalog: CatalogSection,
    pub oven: OvenSection,
    pub beams: BeamSection,
    pub scan: ScanSection,
    pub satspec: SatSection,
    pub fit: FitSection,
    pub errors: ErrorSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogSection {
    /// Alternative catalog TOML; the built-in table otherwise.
    pub path: Option<PathBuf>,
    /// Overrides the natural linewidth.
    pub linewidth_mhz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OvenSection {
    /// Set at most one of `temperature_k` and `mean_velocity`.
    pub temperature_k: Option<f64>,
    /// Flux-mean axial speed, m/s.
    pub mean_velocity: Option<f64>,
    pub tube_length_mm: f64,
    pub bore_radius_mm: f64,
    /// Mass number → abundance weight; natural abundances when absent.
    pub composition: Option<BTreeMap<String, f64>>,
}

impl Default for OvenSection {
    fn default() -> Self {
        OvenSection { temperature_k: None, mean_velocity: None, tube_length_mm: 20.0, bore_radius_mm: 0.75, composition: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSection {
    pub angle_deg: f64,
    pub crossings_mm: [f64; 4],
    pub waist_mm: f64,
    pub intensity_mw_cm2: f64,
}

impl Default for BeamSection {
    fn default() -> Self {
        let g = BeamGeometry::default();
        BeamSection {
            angle_deg: g.angle_deg,
            crossings_mm: g.crossings.map(|c| c * 1e3),
            waist_mm: g.waist_radius * 1e3,
            intensity_mw_cm2: g.peak_intensity / MW_PER_CM2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub coarse_step_mhz: f64,
    pub fine_step_mhz: f64,
    pub window_mhz: f64,
    pub atoms: usize,
    pub pixel_um: f64,
    /// Poisson photons per unit intensity; noiseless when absent.
    pub shot_noise: Option<f64>,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            start_mhz: -800.0,
            stop_mhz: 2200.0,
            coarse_step_mhz: 25.0,
            fine_step_mhz: 5.0,
            window_mhz: 40.0,
            atoms: 100_000,
            pixel_um: 50.0,
            shot_noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatSection {
    pub pump_mw_cm2: f64,
    pub probe_mw_cm2: f64,
    pub pump_on: bool,
    pub crossing_mm: f64,
    pub waist_mm: f64,
    pub pump_efficiency: f64,
    pub atoms: usize,
    pub step_mhz: f64,
    pub noise: Option<f64>,
}

impl Default for SatSection {
    fn default() -> Self {
        let s = SatConfig::default();
        SatSection {
            pump_mw_cm2: s.pump_intensity / MW_PER_CM2,
            probe_mw_cm2: s.probe_intensity / MW_PER_CM2,
            pump_on: s.pump_on,
            crossing_mm: s.crossing * 1e3,
            waist_mm: s.waist_radius * 1e3,
            pump_efficiency: s.pump_efficiency,
            atoms: s.atoms,
            step_mhz: 2.0,
            noise: s.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub angles_deg: Vec<f64>,
    /// Per-point sigma assigned to measured Doppler-shifted centres.
    pub sigma_mhz: f64,
    /// Atoms per frame for the tilted scans.
    pub atoms: usize,
    /// Half-range of each tilted scan around its expected shift.
    pub window_mhz: f64,
    pub step_mhz: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { angles_deg: DEFAULT_ANGLES_DEG.to_vec(), sigma_mhz: 60.0, atoms: 100_000, window_mhz: 450.0, step_mhz: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorSection {
    pub sigma_absolute_mhz: f64,
    pub sigma_relative_mhz: f64,
    pub alignment_slope_mhz_per_deg: f64,
    pub resolution_floor_mhz: f64,
    pub shift_sigma_resolved_mhz: f64,
    pub shift_sigma_merged_mhz: f64,
}

impl Default for ErrorSection {
    fn default() -> Self {
        let b = ErrorBudget::default();
        ErrorSection {
            sigma_absolute_mhz: b.sigma_absolute / MHZ,
            sigma_relative_mhz: b.sigma_relative / MHZ,
            alignment_slope_mhz_per_deg: b.alignment_slope / MHZ,
            resolution_floor_mhz: b.resolution_floor / MHZ,
            shift_sigma_resolved_mhz: b.shift_sigma_resolved / MHZ,
            shift_sigma_merged_mhz: b.shift_sigma_merged / MHZ,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("out"),
            catalog: CatalogSection::default(),
            oven: OvenSection::default(),
            beams: BeamSection::default(),
            scan: ScanSection::default(),
            satspec: SatSection::default(),
            fit: FitSection::default(),
            errors: ErrorSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| SpotError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SpotError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Hex SHA-256 of the canonical TOML form, first 16 digits. The output
    /// directory is left out so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out: PathBuf::new(), ..self.clone() };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// Builds every domain object once so bad values fail at load time.
    pub fn validate(&self) -> Result<()> {
        let catalog = self.catalog()?;
        self.scan_setup(&catalog)?.validate()?;
        self.plan().validate()?;
        self.sat_config().validate()?;
        self.budget().validate()?;
        if !(self.scan.stop_mhz >= self.scan.start_mhz) {
            return Err(SpotError::Domain("scan stop must not precede start".into()));
        }
        if !(self.satspec.step_mhz > 0.0) {
            return Err(SpotError::Domain("satspec step must be positive".into()));
        }
        if !(self.fit.sigma_mhz > 0.0 && self.fit.window_mhz > 0.0 && self.fit.step_mhz > 0.0) || self.fit.atoms == 0 {
            return Err(SpotError::Domain("fit sigma, window, step and atoms must be positive".into()));
        }
        if self.fit.angles_deg.iter().any(|a| !(*a > 0.0 && *a < 180.0)) {
            return Err(SpotError::Domain("fit angles must lie in (0, 180) degrees".into()));
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<Catalog> {
        let mut cat = match &self.catalog.path {
            Some(p) => Catalog::from_path(p)?,
            None => Catalog::natural().clone(),
        };
        if let Some(g) = self.catalog.linewidth_mhz {
            if !(g > 0.0) {
                return Err(SpotError::Domain(format!("linewidth must be positive, got {g} MHz")));
            }
            cat = cat.with_linewidth(g * MHZ);
        }
        Ok(cat)
    }

    pub fn composition(&self, catalog: &Catalog) -> Result<Composition> {
        match &self.oven.composition {
            None => Ok(catalog.natural_composition().clone()),
            Some(map) => {
                let weights = map
                    .iter()
                    .map(|(k, w)| {
                        k.trim()
                            .parse::<u16>()
                            .map(|a| (a, *w))
                            .map_err(|_| SpotError::Config(format!("composition key '{k}' is not a mass number")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (a, _) in &weights {
                    if catalog.lines_of(*a).next().is_none() {
                        return Err(SpotError::Config(format!("no catalog line for mass number {a}")));
                    }
                }
                Composition::new(weights)
            }
        }
    }

    pub fn oven(&self, catalog: &Catalog) -> Result<OvenConfig> {
        let composition = self.composition(catalog)?;
        let mut oven = OvenConfig::default_for(catalog).with_composition(composition.clone());
        oven.tube_length = self.oven.tube_length_mm * 1e-3;
        oven.bore_radius = self.oven.bore_radius_mm * 1e-3;
        oven.temperature = match (self.oven.temperature_k, self.oven.mean_velocity) {
            (Some(_), Some(_)) => {
                return Err(SpotError::Config("set either oven.temperature_k or oven.mean_velocity, not both".into()))
            }
            (Some(t), None) => t,
            (None, Some(v)) => temperature_for_velocity(v, &composition, catalog)?,
            (None, None) => temperature_for_velocity(crate::beamsim::DEFAULT_MEAN_AXIAL_VELOCITY, &composition, catalog)?,
        };
        oven.validate()?;
        Ok(oven)
    }

    pub fn beams(&self) -> BeamGeometry {
        BeamGeometry {
            angle_deg: self.beams.angle_deg,
            crossings: self.beams.crossings_mm.map(|c| c * 1e-3),
            waist_radius: self.beams.waist_mm * 1e-3,
            peak_intensity: self.beams.intensity_mw_cm2 * MW_PER_CM2,
        }
    }

    pub fn scan_setup(&self, catalog: &Catalog) -> Result<ScanSetup> {
        let frame = FrameSpec {
            pixel_pitch: self.scan.pixel_um * 1e-6,
            shot_noise: self
                .scan
                .shot_noise
                .map(|p| crate::spotfield::ShotNoise { photons_per_unit: p, seed: self.seed }),
            ..FrameSpec::default()
        };
        let setup = ScanSetup { oven: self.oven(catalog)?, beams: self.beams(), atoms_per_frame: self.scan.atoms, frame };
        setup.validate()?;
        Ok(setup)
    }

    pub fn plan(&self) -> TwoPhasePlan {
        TwoPhasePlan {
            coarse_step: self.scan.coarse_step_mhz * MHZ,
            fine_step: self.scan.fine_step_mhz * MHZ,
            window: self.scan.window_mhz * MHZ,
        }
    }

    pub fn sat_config(&self) -> SatConfig {
        let s = &self.satspec;
        SatConfig {
            pump_intensity: s.pump_mw_cm2 * MW_PER_CM2,
            probe_intensity: s.probe_mw_cm2 * MW_PER_CM2,
            pump_on: s.pump_on,
            crossing: s.crossing_mm * 1e-3,
            waist_radius: s.waist_mm * 1e-3,
            pump_efficiency: s.pump_efficiency,
            atoms: s.atoms,
            noise: s.noise,
        }
    }

    pub fn budget(&self) -> ErrorBudget {
        let e = &self.errors;
        ErrorBudget {
            sigma_absolute: e.sigma_absolute_mhz * MHZ,
            sigma_relative: e.sigma_relative_mhz * MHZ,
            alignment_slope: e.alignment_slope_mhz_per_deg * MHZ,
            resolution_floor: e.resolution_floor_mhz * MHZ,
            shift_sigma_resolved: e.shift_sigma_resolved_mhz * MHZ,
            shift_sigma_merged: e.shift_sigma_merged_mhz * MHZ,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("sede = 3"), Err(SpotError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("[beams]\nangel_deg = 70"), Err(SpotError::Config(_))));
    }

    #[test]
    fn physical_values_checked_at_load() {
        assert!(RunConfig::from_toml_str("[beams]\nangle_deg = 190").is_err());
        assert!(RunConfig::from_toml_str("[oven]\ntemperature_k = -5").is_err());
        assert!(RunConfig::from_toml_str("[oven]\ntemperature_k = 700\nmean_velocity = 250").is_err());
        assert!(RunConfig::from_toml_str("[oven.composition]\n175 = 1.0").is_err());
    }

    #[test]
    fn partial_config_and_hash_sensitivity() {
        let cfg = RunConfig::from_toml_str("seed = 11\n[beams]\nangle_deg = 70\n[oven.composition]\n174 = 1.0").unwrap();
        let cat = cfg.catalog().unwrap();
        let setup = cfg.scan_setup(&cat).unwrap();
        assert_eq!(setup.beams.angle_deg, 70.0);
        assert_eq!(setup.oven.composition.len(), 1);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
        let moved = RunConfig { out: "elsewhere".into(), ..cfg.clone() };
        assert_eq!(moved.hash(), cfg.hash());
    }
}
