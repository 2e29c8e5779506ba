//! Physical constants and the Yb ¹S₀↔¹P₁ line catalog.
//!
//! The catalog is loaded from a small TOML file (`data/yb_catalog.toml` is
//! bundled into the binary). All frequencies are stored in Hz, intensities in
//! W/m², masses in kg.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpotError};

pub const MHZ: f64 = 1.0e6;
pub const THZ: f64 = 1.0e12;
/// 1 mW/cm² expressed in W/m².
pub const MW_PER_CM2: f64 = 10.0;

/// Reference isotope for all shifts.
pub const REFERENCE_MASS_NUMBER: u16 = 174;

/// Merge scale of the spot method: lines closer than this cannot be separated.
pub const MERGE_WINDOW_HZ: f64 = 60.0 * MHZ;

const BUNDLED_CATALOG: &str = include_str!("../data/yb_catalog.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Speed of light, m/s.
    pub c: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Atomic mass unit, kg.
    pub amu: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            c: 299_792_458.0,
            k_b: 1.380_649e-23,
            amu: 1.660_539_066_60e-27,
        }
    }
}

/// Transition-wide parameters of the ¹S₀↔¹P₁ line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCatalog {
    pub name: String,
    /// Absolute frequency of the ¹⁷⁴Yb line, Hz.
    pub f_ref: f64,
    /// Stored uncertainty of `f_ref`, Hz.
    pub f_ref_sigma: f64,
    /// Natural linewidth (FWHM), Hz.
    pub gamma_fwhm: f64,
    /// Saturation intensity, W/m².
    pub i_sat: f64,
    /// Nominal wavelength, m.
    pub lambda_nominal: f64,
}

/// Shift values reported elsewhere in the literature, Hz. Metadata only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiteratureShifts {
    pub das: Option<f64>,
    pub loftus: Option<f64>,
    pub braun: Option<f64>,
    pub deil: Option<f64>,
}

/// Identifier of a catalog line: mass number plus upper-state F for the
/// fermionic isotopes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineId {
    pub mass_number: u16,
    pub upper_f: Option<String>,
}

impl LineId {
    pub fn boson(mass_number: u16) -> Self {
        LineId { mass_number, upper_f: None }
    }

    pub fn fermion(mass_number: u16, upper_f: &str) -> Self {
        LineId { mass_number, upper_f: Some(upper_f.to_string()) }
    }
}

impl fmt::Display for LineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.upper_f {
            Some(uf) => write!(f, "{}(F'={})", self.mass_number, uf),
            None => write!(f, "{}", self.mass_number),
        }
    }
}

impl FromStr for LineId {
    type Err = SpotError;

    /// Accepts `174`, `171:3/2`, `171 F=3/2`, `171(F'=3/2)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
        let mass_number: u16 = digits
            .parse()
            .map_err(|_| SpotError::NotFound(format!("unrecognised line label '{s}'")))?;
        let rest = s[digits.len()..]
            .trim()
            .trim_start_matches([':', '('])
            .trim_end_matches(')')
            .trim();
        let rest = rest
            .trim_start_matches("F'=")
            .trim_start_matches("F=")
            .trim_start_matches("F’=")
            .trim();
        if rest.is_empty() {
            Ok(LineId::boson(mass_number))
        } else if rest.chars().all(|c| c.is_ascii_digit() || c == '/') {
            Ok(LineId::fermion(mass_number, rest))
        } else {
            Err(SpotError::NotFound(format!("unrecognised line label '{s}'")))
        }
    }
}

/// Cluster of lines the spot method cannot resolve.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotopeLine {
    pub mass_number: u16,
    /// Upper-state F (`None` for bosonic isotopes).
    pub upper_f: Option<String>,
    /// Transition label in its customary printed form.
    pub hyperfine_label: String,
    /// Ground-truth shift from the ¹⁷⁴Yb line, Hz.
    pub shift_from_174: f64,
    /// Shift reported by the spot measurement (cluster value for merged rows), Hz.
    pub reported_shift: f64,
    pub shift_sigma: f64,
    /// Fraction of all atoms addressed by this line (isotope abundance × line strength).
    pub abundance: f64,
    /// Fraction of the isotope's atoms addressed by this line.
    pub strength: f64,
    pub cluster_id: ClusterId,
    pub literature: LiteratureShifts,
}

impl IsotopeLine {
    pub fn id(&self) -> LineId {
        LineId { mass_number: self.mass_number, upper_f: self.upper_f.clone() }
    }

    pub fn is_reference(&self) -> bool {
        self.mass_number == REFERENCE_MASS_NUMBER && self.upper_f.is_none()
    }
}

/// Natural-isotope composition, or any other abundance map keyed by mass number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition(BTreeMap<u16, f64>);

impl Composition {
    /// Normalises the given weights. Fails on negative or all-zero weights.
    pub fn new(weights: impl IntoIterator<Item = (u16, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (a, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(SpotError::Domain(format!("abundance of {a} must be >= 0, got {w}")));
            }
            if w > 0.0 {
                *map.entry(a).or_insert(0.0) += w;
            }
        }
        let total: f64 = map.values().sum();
        if total <= 0.0 {
            return Err(SpotError::Domain("composition has no isotopes".into()));
        }
        for w in map.values_mut() {
            *w /= total;
        }
        Ok(Composition(map))
    }

    pub fn single(mass_number: u16) -> Self {
        Composition(BTreeMap::from([(mass_number, 1.0)]))
    }

    pub fn fraction(&self, mass_number: u16) -> f64 {
        self.0.get(&mass_number).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.0.iter().map(|(&a, &w)| (a, w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Immutable line catalog shared by every module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub constants: PhysicalConstants,
    pub transition: TransitionCatalog,
    pub lines: Vec<IsotopeLine>,
    natural: Composition,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    constants: RawConstants,
    transition: RawTransition,
    abundance: Vec<RawAbundance>,
    line: Vec<RawLine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    speed_of_light: f64,
    boltzmann: f64,
    atomic_mass_unit: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    name: String,
    reference_frequency_thz: f64,
    reference_sigma_mhz: f64,
    linewidth_mhz: f64,
    saturation_intensity_mw_cm2: f64,
    wavelength_nm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAbundance {
    mass_number: u16,
    fraction: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    mass_number: u16,
    upper_f: String,
    transition: String,
    shift_mhz: f64,
    reported_mhz: f64,
    sigma_mhz: f64,
    strength: f64,
    cluster: String,
    das_mhz: Option<f64>,
    loftus_mhz: Option<f64>,
    braun_mhz: Option<f64>,
    deil_mhz: Option<f64>,
}

/// MHz → Hz, rounded to the nearest Hz so that table differences are exact.
fn mhz(v: f64) -> f64 {
    (v * MHZ).round()
}

impl Catalog {
    /// The bundled natural-Yb catalog.
    pub fn natural() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            Catalog::from_toml_str(BUNDLED_CATALOG).expect("bundled catalog is valid")
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Catalog> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Catalog::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Catalog> {
        let raw: RawCatalog =
            toml::from_str(text).map_err(|e| SpotError::Config(format!("catalog: {e}")))?;
        let constants = PhysicalConstants {
            c: raw.constants.speed_of_light,
            k_b: raw.constants.boltzmann,
            amu: raw.constants.atomic_mass_unit,
        };
        let transition = TransitionCatalog {
            name: raw.transition.name,
            f_ref: (raw.transition.reference_frequency_thz * 1.0e6).round() * MHZ,
            f_ref_sigma: mhz(raw.transition.reference_sigma_mhz),
            gamma_fwhm: mhz(raw.transition.linewidth_mhz),
            i_sat: raw.transition.saturation_intensity_mw_cm2 * MW_PER_CM2,
            lambda_nominal: raw.transition.wavelength_nm * 1.0e-9,
        };
        let natural = Composition::new(raw.abundance.iter().map(|a| (a.mass_number, a.fraction)))?;
        let lines = raw
            .line
            .into_iter()
            .map(|l| IsotopeLine {
                mass_number: l.mass_number,
                upper_f: (!l.upper_f.is_empty()).then_some(l.upper_f),
                hyperfine_label: l.transition,
                shift_from_174: mhz(l.shift_mhz),
                reported_shift: mhz(l.reported_mhz),
                shift_sigma: mhz(l.sigma_mhz),
                abundance: natural.fraction(l.mass_number) * l.strength,
                strength: l.strength,
                cluster_id: ClusterId(l.cluster),
                literature: LiteratureShifts {
                    das: l.das_mhz.map(mhz),
                    loftus: l.loftus_mhz.map(mhz),
                    braun: l.braun_mhz.map(mhz),
                    deil: l.deil_mhz.map(mhz),
                },
            })
            .collect();
        let cat = Catalog { constants, transition, lines, natural };
        cat.validate()?;
        Ok(cat)
    }

    /// Checks the catalog invariants.
    pub fn validate(&self) -> Result<()> {
        let k = &self.constants;
        if !(k.c > 0.0 && k.k_b > 0.0 && k.amu > 0.0) {
            return Err(SpotError::Config("physical constants must be positive".into()));
        }
        let t = &self.transition;
        if !(t.f_ref > 0.0 && t.gamma_fwhm > 0.0 && t.i_sat > 0.0 && t.lambda_nominal > 0.0) {
            return Err(SpotError::Config("transition parameters must be positive".into()));
        }
        let rel = (t.lambda_nominal * t.f_ref - k.c).abs() / k.c;
        if rel >= 1.0e-6 {
            return Err(SpotError::Config(format!(
                "wavelength and frequency disagree with c (relative {rel:.2e})"
            )));
        }
        let reference: Vec<_> = self.lines.iter().filter(|l| l.is_reference()).collect();
        if reference.len() != 1 || reference[0].shift_from_174 != 0.0 {
            return Err(SpotError::Config("catalog needs exactly one 174 line with zero shift".into()));
        }
        let total: f64 = self.lines.iter().map(|l| l.abundance).sum();
        if (total - 1.0).abs() > 1.0e-6 {
            return Err(SpotError::Config(format!("line abundances sum to {total}, expected 1")));
        }
        for (i, a) in self.lines.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.abundance) {
                return Err(SpotError::Config(format!("line {} abundance out of range", a.id())));
            }
            if self.lines[i + 1..].iter().any(|b| b.id() == a.id()) {
                return Err(SpotError::Config(format!("duplicate line {}", a.id())));
            }
        }
        // Every cluster member must sit within the merge window of another member.
        for a in &self.lines {
            let members: Vec<_> = self.cluster_members(&a.cluster_id).collect();
            if members.len() > 1
                && !members.iter().any(|b| {
                    b.id() != a.id() && (a.shift_from_174 - b.shift_from_174).abs() < MERGE_WINDOW_HZ
                })
            {
                return Err(SpotError::Config(format!("line {} is isolated in its cluster", a.id())));
            }
        }
        Ok(())
    }

    /// Copy with a different natural linewidth (used for resolvability checks).
    pub fn with_linewidth(&self, gamma_fwhm: f64) -> Catalog {
        let mut c = self.clone();
        c.transition.gamma_fwhm = gamma_fwhm;
        c
    }

    pub fn natural_composition(&self) -> &Composition {
        &self.natural
    }

    /// Looks a line up by its textual id (`174`, `171:3/2`, ...).
    pub fn line(&self, key: &str) -> Result<&IsotopeLine> {
        let id: LineId = key.parse()?;
        self.line_by_id(&id)
    }

    pub fn line_by_id(&self, id: &LineId) -> Result<&IsotopeLine> {
        self.lines
            .iter()
            .find(|l| l.mass_number == id.mass_number && l.upper_f == id.upper_f)
            .ok_or_else(|| SpotError::NotFound(format!("no catalog line {id}")))
    }

    pub fn reference_line(&self) -> &IsotopeLine {
        self.lines.iter().find(|l| l.is_reference()).expect("validated catalog has a 174 line")
    }

    pub fn lines_of(&self, mass_number: u16) -> impl Iterator<Item = &IsotopeLine> {
        self.lines.iter().filter(move |l| l.mass_number == mass_number)
    }

    pub fn cluster_members<'a>(&'a self, id: &ClusterId) -> impl Iterator<Item = &'a IsotopeLine> + use<'a> {
        let id = id.clone();
        self.lines.iter().filter(move |l| l.cluster_id == id)
    }

    /// Mass of an isotope (mass number × amu).
    pub fn isotope_mass(&self, mass_number: u16) -> f64 {
        f64::from(mass_number) * self.constants.amu
    }

    /// Absolute frequency of a line by textual id.
    pub fn frequency_of(&self, key: &str) -> Result<f64> {
        Ok(line_frequency(self.line(key)?, &self.transition))
    }
}

/// Absolute line frequency: reference plus the isotope shift.
pub fn line_frequency(line: &IsotopeLine, transition: &TransitionCatalog) -> f64 {
    transition.f_ref + line.shift_from_174
}

/// Signed frequency difference `a − b`.
pub fn shift_between(a: &IsotopeLine, b: &IsotopeLine) -> f64 {
    a.shift_from_174 - b.shift_from_174
}
