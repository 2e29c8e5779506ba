//! The command-line experiments: each runs one analysis from a [`RunConfig`]
//! and writes its artifacts under the configured output directory.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::artifact::{write_csv, write_json, write_pgm, Provenance};
use crate::beamsim::sample_atoms;
use crate::config::RunConfig;
use crate::dopplerfit::{doppler_shift, fit, synthesize_dataset, DopplerDataset, DopplerFitResult, DopplerRecord};
use crate::error::{Result, SpotError};
use crate::photonics::LaserState;
use crate::satspec::{extract_dips, simulate_spectrum, Spectrum};
use crate::spectro::{
    detuning_grid, extract_isotope_shifts, find_doppler_free_resonances, find_doppler_shifted_resonance, PeakEstimate,
    ScanTrace, Scanner, ShiftTable,
};
use crate::spotfield::{alignment, extract_centroids, AlignmentResult, BeamPair, Spot};
use crate::ybdata::{Catalog, Composition, LineId, MHZ, THZ};

/// Absolute frequencies measured on the bench for the four labelled
/// saturation features, by saturation spectroscopy and by the spot method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchAbsolute {
    pub label: u8,
    /// Line ids of the feature, first one used to locate it.
    pub lines: &'static [&'static str],
    pub saturation_thz: f64,
    pub spot_thz: f64,
}

pub const BENCH_ABSOLUTE: [BenchAbsolute; 4] = [
    BenchAbsolute { label: 1, lines: &["176"], saturation_thz: 751.52615, spot_thz: 751.52615 },
    BenchAbsolute { label: 2, lines: &["172", "173:3/2", "173:7/2"], saturation_thz: 751.52714, spot_thz: 751.52720 },
    BenchAbsolute { label: 3, lines: &["171:3/2"], saturation_thz: 751.52760, spot_thz: 751.52749 },
    BenchAbsolute { label: 4, lines: &["170", "171:1/2"], saturation_thz: 751.52779, spot_thz: 751.52780 },
];

/// Allowed |recovered − injected| shift for a resolved line, Hz.
pub const RESOLVED_SHIFT_TOLERANCE: f64 = 30.0 * MHZ;

/// Allowed |satspec − spot| centre difference on one configuration, Hz.
pub const CROSS_CHECK_TOLERANCE: f64 = 5.0 * MHZ;

pub struct Experiment {
    pub config: RunConfig,
    pub catalog: Catalog,
    pub prov: Provenance,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanOutcome {
    pub trace: ScanTrace,
    pub peaks: Vec<PeakEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RenderOutcome {
    pub detuning_mhz: f64,
    pub spots: [Spot; 4],
    pub alignment: Option<AlignmentResult>,
    pub total_intensity: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SatOutcome {
    pub spectrum: Spectrum,
    pub dips: Vec<PeakEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub v_mean: f64,
    pub sigma_v: f64,
    pub f0_thz: f64,
    pub sigma_f0_mhz: f64,
    pub chi2_per_dof: Option<f64>,
    pub covariance: [[f64; 2]; 2],
    pub residuals_mhz: Vec<f64>,
    pub n_points: usize,
}

impl FitSummary {
    pub fn new(r: &DopplerFitResult) -> Self {
        FitSummary {
            v_mean: r.v_mean,
            sigma_v: r.sigma_v(),
            f0_thz: r.f0 / THZ,
            sigma_f0_mhz: r.sigma_f0() / MHZ,
            chi2_per_dof: r.chi2_per_dof,
            covariance: r.covariance,
            residuals_mhz: r.residuals.iter().map(|x| x / MHZ).collect(),
            n_points: r.residuals.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftCheck {
    pub line: String,
    pub transition: String,
    pub shift_mhz: f64,
    pub sigma_mhz: f64,
    pub merged: bool,
    pub catalog_mhz: f64,
    pub reported_mhz: f64,
    pub error_mhz: f64,
    pub tolerance_mhz: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbsoluteCheck {
    pub label: u8,
    pub lines: String,
    pub saturation_thz: Option<f64>,
    pub spot_thz: Option<f64>,
    pub bench_saturation_thz: f64,
    pub bench_spot_thz: f64,
    pub methods_differ_mhz: Option<f64>,
    pub saturation_error_mhz: Option<f64>,
    pub spot_error_mhz: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub shifts: Vec<ShiftCheck>,
    pub shifts_passed: usize,
    pub absolute: Vec<AbsoluteCheck>,
    pub doppler: FitSummary,
    pub doppler_configured_velocity: f64,
}

fn f(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| f(x, digits)).unwrap_or_default()
}

impl Experiment {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let catalog = config.catalog()?;
        let prov = Provenance::new(config.hash(), config.seed);
        Ok(Experiment { config, catalog, prov })
    }

    pub fn out(&self) -> &Path {
        &self.config.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    /// Catalog table.
    pub fn isotopes(&self) -> Result<PathBuf> {
        let rows: Vec<Vec<String>> = self
            .catalog
            .lines
            .iter()
            .map(|l| {
                vec![
                    l.id().to_string(),
                    l.hyperfine_label.clone(),
                    f(l.shift_from_174 / MHZ, 1),
                    f(l.reported_shift / MHZ, 1),
                    f(l.shift_sigma / MHZ, 1),
                    f(l.abundance, 5),
                    l.cluster_id.0.clone(),
                ]
            })
            .collect();
        let p = self.path("isotopes.csv");
        write_csv(
            &p,
            &self.prov,
            &["line", "transition", "shift_mhz", "reported_mhz", "sigma_mhz", "abundance", "cluster"],
            &rows,
        )?;
        Ok(p)
    }

    /// Writes `n` sampled atoms (exit point and velocity).
    pub fn dump_atoms(&self, n: usize) -> Result<PathBuf> {
        let oven = self.config.oven(&self.catalog)?;
        let atoms = sample_atoms(&oven, &self.catalog, n, self.config.seed)?;
        let rows: Vec<Vec<String>> = atoms
            .iter()
            .map(|a| {
                let mut r = vec![a.isotope.to_string()];
                r.extend(a.position.iter().map(|v| format!("{v:.9e}")));
                r.extend(a.velocity.iter().map(|v| f(*v, 6)));
                r
            })
            .collect();
        let p = self.path("atoms.csv");
        write_csv(&p, &self.prov, &["isotope", "x_m", "y_m", "z_m", "vx", "vy", "vz"], &rows)?;
        Ok(p)
    }

    /// One camera frame at `detuning` (Hz from the ¹⁷⁴Yb line).
    pub fn render(&self, detuning: f64) -> Result<RenderOutcome> {
        let setup = self.config.scan_setup(&self.catalog)?;
        let scanner = Scanner::new(setup, &self.catalog, self.config.seed)?;
        let spec = self.config.scan_setup(&self.catalog)?.frame;
        let frame = scanner.table().render(&LaserState::new(detuning)?, &self.catalog, &spec)?;
        let beams = scanner.table().beams();
        let spots = extract_centroids(&frame, beams);
        let out = RenderOutcome {
            detuning_mhz: detuning / MHZ,
            alignment: alignment(&spots, beams, scanner.table().plane()).ok(),
            spots,
            total_intensity: frame.total(),
            width: frame.width,
            height: frame.height,
        };
        write_pgm(&self.path("frame.pgm"), &frame, &self.prov)?;
        write_json(&self.path("spots.json"), &self.prov, &out)?;
        Ok(out)
    }

    pub fn compute_scan(&self) -> Result<ScanOutcome> {
        let setup = self.config.scan_setup(&self.catalog)?;
        let scanner = Scanner::new(setup, &self.catalog, self.config.seed)?;
        let s = &self.config.scan;
        let trace = scanner.two_phase(s.start_mhz * MHZ, s.stop_mhz * MHZ, &self.config.plan())?;
        let peaks = find_doppler_free_resonances(&trace, &self.catalog)?;
        Ok(ScanOutcome { trace, peaks })
    }

    fn write_scan(&self, scan: &ScanOutcome) -> Result<()> {
        let rows: Vec<Vec<String>> = scan
            .trace
            .points
            .iter()
            .map(|p| {
                let a = p.alignment.as_ref();
                vec![
                    f(p.detuning / MHZ, 3),
                    opt(a.map(|a| a.perp_residual * 1e6), 4),
                    opt(a.map(|a| a.zigzag * 1e6), 4),
                    opt(a.map(|a| a.line_angle_to_axis.to_degrees()), 5),
                    opt(p.pair_offsets.pair24.map(|v| v * 1e6), 3),
                    opt(p.pair_offsets.pair13.map(|v| v * 1e6), 3),
                    format!("{:.6e}", p.pair_intensity.pair24),
                    format!("{:.6e}", p.pair_intensity.pair13),
                    format!("{:.6e}", p.total_intensity),
                    a.map(|a| a.spots_used).unwrap_or(0).to_string(),
                ]
            })
            .collect();
        write_csv(
            &self.path("scan_trace.csv"),
            &self.prov,
            &[
                "detuning_mhz",
                "perp_residual_um",
                "zigzag_um",
                "line_angle_deg",
                "pair24_offset_um",
                "pair13_offset_um",
                "pair24_intensity",
                "pair13_intensity",
                "total_intensity",
                "spots_used",
            ],
            &rows,
        )?;
        write_json(&self.path("peaks.json"), &self.prov, &PeaksJson::new(&scan.peaks, &self.catalog))
    }

    pub fn scan(&self) -> Result<ScanOutcome> {
        let scan = self.compute_scan()?;
        self.write_scan(&scan)?;
        Ok(scan)
    }

    fn write_shifts(&self, table: &ShiftTable) -> Result<Vec<ShiftCheck>> {
        let budget = self.config.budget();
        let checks: Vec<ShiftCheck> = table
            .published_rows()
            .map(|r| {
                let reported = self.catalog.line_by_id(&r.line).map(|l| l.reported_shift).unwrap_or(f64::NAN);
                let tolerance = if r.merged { budget.shift_sigma_merged } else { RESOLVED_SHIFT_TOLERANCE };
                let error = r.shift - r.catalog_shift;
                ShiftCheck {
                    line: r.line.to_string(),
                    transition: r.transition.clone(),
                    shift_mhz: r.shift / MHZ,
                    sigma_mhz: r.sigma / MHZ,
                    merged: r.merged,
                    catalog_mhz: r.catalog_shift / MHZ,
                    reported_mhz: reported / MHZ,
                    error_mhz: error / MHZ,
                    tolerance_mhz: tolerance / MHZ,
                    pass: error.abs() <= tolerance,
                }
            })
            .collect();
        let rows: Vec<Vec<String>> = checks
            .iter()
            .map(|c| {
                vec![
                    c.line.clone(),
                    c.transition.clone(),
                    f(c.shift_mhz, 1),
                    f(c.sigma_mhz, 0),
                    c.merged.to_string(),
                    f(c.catalog_mhz, 1),
                    f(c.reported_mhz, 1),
                    f(c.error_mhz, 1),
                    f(c.tolerance_mhz, 0),
                    if c.pass { "PASS" } else { "FAIL" }.to_string(),
                ]
            })
            .collect();
        write_csv(
            &self.path("shifts.csv"),
            &self.prov,
            &[
                "line",
                "transition",
                "shift_mhz",
                "sigma_mhz",
                "merged",
                "catalog_mhz",
                "reported_mhz",
                "error_mhz",
                "tolerance_mhz",
                "status",
            ],
            &rows,
        )?;
        Ok(checks)
    }

    /// Natural-mix scan, then the shift table (one row per non-reference line).
    pub fn shifts(&self) -> Result<(ShiftTable, Vec<ShiftCheck>)> {
        let scan = self.scan()?;
        let table = extract_isotope_shifts(&scan.peaks, &self.catalog, &self.config.budget())?;
        let checks = self.write_shifts(&table)?;
        Ok((table, checks))
    }

    pub fn compute_satspec(&self) -> Result<SatOutcome> {
        let oven = self.config.oven(&self.catalog)?;
        let s = &self.config.scan;
        let spectrum = simulate_spectrum(
            &self.config.sat_config(),
            &oven,
            &self.catalog,
            s.start_mhz * MHZ,
            s.stop_mhz * MHZ,
            self.config.satspec.step_mhz * MHZ,
            self.config.seed,
        )?;
        let dips = if spectrum.config.pump_on { extract_dips(&spectrum, &self.catalog)? } else { Vec::new() };
        Ok(SatOutcome { spectrum, dips })
    }

    fn write_satspec(&self, sat: &SatOutcome) -> Result<()> {
        let rows: Vec<Vec<String>> = sat
            .spectrum
            .samples
            .iter()
            .map(|s| {
                vec![
                    f((sat.spectrum.f_ref + s.detuning) / 1.0, 0),
                    format!("{:.9e}", s.absorption),
                    s.background.map(|b| format!("{b:.9e}")).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(&self.path("spectrum.csv"), &self.prov, &["f_hz", "absorption", "background"], &rows)?;
        write_json(&self.path("dips.json"), &self.prov, &PeaksJson::new(&sat.dips, &self.catalog))
    }

    pub fn satspec(&self) -> Result<SatOutcome> {
        let sat = self.compute_satspec()?;
        self.write_satspec(&sat)?;
        Ok(sat)
    }

    /// Tilted-geometry scans of ¹⁷⁴Yb: one Doppler-shifted centre (pair 2, 4)
    /// per configured angle.
    pub fn doppler_series(&self) -> Result<DopplerDataset> {
        let fit_cfg = &self.config.fit;
        let base = self.config.scan_setup(&self.catalog)?.with_composition(Composition::single(174)).with_atoms(fit_cfg.atoms);
        let grid = detuning_grid(-fit_cfg.window_mhz * MHZ, fit_cfg.window_mhz * MHZ, fit_cfg.step_mhz * MHZ)?;
        let mut records = Vec::new();
        for &angle in &fit_cfg.angles_deg {
            let setup = base.clone().with_angle(angle);
            let trace = Scanner::new(setup.clone(), &self.catalog, self.config.seed)?.scan(&grid)?;
            let peak = find_doppler_shifted_resonance(&trace, BeamPair::Pair24, &setup)?;
            records.push(DopplerRecord { theta_deg: angle, measured_frequency: peak.center, sigma: fit_cfg.sigma_mhz * MHZ });
        }
        DopplerDataset::new(records)
    }

    /// Noiseless points for velocity `v` at the configured angles.
    pub fn synthetic_series(&self, v: f64, sigma_hz: f64) -> Result<DopplerDataset> {
        synthesize_dataset(
            v,
            self.catalog.transition.f_ref,
            &self.config.fit.angles_deg,
            sigma_hz,
            self.config.seed,
            self.catalog.constants.c,
        )
    }

    pub fn fit_doppler(&self, data: &DopplerDataset) -> Result<DopplerFitResult> {
        let r = fit(data, self.catalog.constants.c)?;
        let c = self.catalog.constants.c;
        let rows: Vec<Vec<String>> = data
            .records
            .iter()
            .map(|p| {
                let model = r.f0 + doppler_shift(r.f0, r.v_mean, p.theta_deg, c).unwrap_or(f64::NAN);
                vec![
                    f(p.theta_deg, 3),
                    f(p.measured_frequency, 0),
                    f(p.sigma, 0),
                    f((p.measured_frequency - self.catalog.transition.f_ref) / MHZ, 3),
                    f((model - self.catalog.transition.f_ref) / MHZ, 3),
                ]
            })
            .collect();
        write_csv(
            &self.path("doppler_points.csv"),
            &self.prov,
            &["theta_deg", "frequency_hz", "sigma_hz", "shift_mhz", "model_shift_mhz"],
            &rows,
        )?;
        write_json(&self.path("doppler_fit.json"), &self.prov, &FitSummary::new(&r))?;
        Ok(r)
    }

    /// Recovered shifts against the catalog, the saturation/spot comparison
    /// for the labelled features, and the velocity fit from tilted scans.
    pub fn report(&self) -> Result<ReportSummary> {
        let scan = self.compute_scan()?;
        self.write_scan(&scan)?;
        let table = extract_isotope_shifts(&scan.peaks, &self.catalog, &self.config.budget())?;
        let shifts = self.write_shifts(&table)?;

        let mut sat_cfg = self.config.clone();
        sat_cfg.satspec.pump_on = true;
        let sat = Experiment { config: sat_cfg, catalog: self.catalog.clone(), prov: self.prov.clone() }.compute_satspec()?;
        self.write_satspec(&sat)?;
        let absolute = absolute_checks(&sat.dips, &scan.peaks, &self.catalog)?;
        let rows: Vec<Vec<String>> = absolute
            .iter()
            .map(|a| {
                vec![
                    a.label.to_string(),
                    a.lines.clone(),
                    opt(a.saturation_thz, 7),
                    opt(a.spot_thz, 7),
                    f(a.bench_saturation_thz, 5),
                    f(a.bench_spot_thz, 5),
                    opt(a.methods_differ_mhz, 2),
                    opt(a.saturation_error_mhz, 1),
                    opt(a.spot_error_mhz, 1),
                ]
            })
            .collect();
        write_csv(
            &self.path("absolute.csv"),
            &self.prov,
            &[
                "label",
                "lines",
                "saturation_thz",
                "spot_thz",
                "bench_saturation_thz",
                "bench_spot_thz",
                "methods_differ_mhz",
                "saturation_error_mhz",
                "spot_error_mhz",
            ],
            &rows,
        )?;

        let data = self.doppler_series()?;
        let fit = self.fit_doppler(&data)?;
        let oven = self.config.oven(&self.catalog)?;
        let configured = crate::beamsim::analytic_mean_axial_velocity(oven.temperature, &Composition::single(174), &self.catalog);
        let summary = ReportSummary {
            shifts_passed: shifts.iter().filter(|c| c.pass).count(),
            shifts,
            absolute,
            doppler: FitSummary::new(&fit),
            doppler_configured_velocity: configured,
        };
        write_json(&self.path("report.json"), &self.prov, &summary)?;
        Ok(summary)
    }
}

/// Locates each labelled feature among satspec dips and spot peaks.
pub fn absolute_checks(dips: &[PeakEstimate], peaks: &[PeakEstimate], catalog: &Catalog) -> Result<Vec<AbsoluteCheck>> {
    BENCH_ABSOLUTE
        .iter()
        .map(|b| {
            let id: LineId = b.lines[0].parse()?;
            catalog.line_by_id(&id)?;
            let find = |list: &[PeakEstimate]| list.iter().find(|p| p.contains(&id)).map(|p| p.center);
            let (sat, spot) = (find(dips), find(peaks));
            Ok(AbsoluteCheck {
                label: b.label,
                lines: b.lines.join(" "),
                saturation_thz: sat.map(|v| v / THZ),
                spot_thz: spot.map(|v| v / THZ),
                bench_saturation_thz: b.saturation_thz,
                bench_spot_thz: b.spot_thz,
                methods_differ_mhz: sat.zip(spot).map(|(a, b)| (a - b) / MHZ),
                saturation_error_mhz: sat.map(|v| (v - b.saturation_thz * THZ) / MHZ),
                spot_error_mhz: spot.map(|v| (v - b.spot_thz * THZ) / MHZ),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct PeakJson {
    center_thz: f64,
    detuning_mhz: f64,
    width_fwhm_mhz: f64,
    amplitude: f64,
    merged: bool,
    lines: Vec<String>,
}

#[derive(Serialize)]
struct PeaksJson {
    peaks: Vec<PeakJson>,
}

impl PeaksJson {
    fn new(peaks: &[PeakEstimate], catalog: &Catalog) -> Self {
        PeaksJson {
            peaks: peaks
                .iter()
                .map(|p| PeakJson {
                    center_thz: p.center / THZ,
                    detuning_mhz: (p.center - catalog.transition.f_ref) / MHZ,
                    width_fwhm_mhz: p.width_fwhm / MHZ,
                    amplitude: p.amplitude,
                    merged: p.merged,
                    lines: p.assigned_lines.iter().map(|l| l.to_string()).collect(),
                })
                .collect(),
        }
    }
}

/// Reads a Doppler dataset CSV with columns `theta_deg, frequency_hz, sigma_hz`
/// (`#` lines ignored).
pub fn read_doppler_csv(path: &Path) -> Result<DopplerDataset> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SpotError::Config(format!("{}: missing column '{name}'", path.display())))
    };
    let (ct, cf, cs) = (col("theta_deg")?, col("frequency_hz")?, col("sigma_hz")?);
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| {
            row.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| SpotError::Config(format!("{}: bad number in row {:?}", path.display(), row.position())))
        };
        records.push(DopplerRecord { theta_deg: num(ct)?, measured_frequency: num(cf)?, sigma: num(cs)? });
    }
    DopplerDataset::new(records)
}
