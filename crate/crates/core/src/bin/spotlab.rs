use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use spotlab::artifact::json_string;
use spotlab::beamsim::{analytic_mean_axial_velocity, mean_axial_velocity};
use spotlab::config::RunConfig;
use spotlab::experiments::{read_doppler_csv, Experiment, FitSummary};
use spotlab::labserver::{serve, LabConfig};
use spotlab::ybdata::{MHZ, THZ};
use spotlab::SpotError;

#[derive(Parser)]
#[command(name = "spotlab", version, about = "Fluorescence-spot spectroscopy simulator for the Yb 398.9 nm line")]
struct Cli {
    /// TOML run configuration; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the simulation.
    #[arg(long, global = true, env = "SPOTLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the line catalog and write isotopes.csv.
    Isotopes,
    /// Oven and atomic-beam summary.
    Beam {
        /// Write sampled atoms to atoms.csv.
        #[arg(long)]
        dump: bool,
        #[arg(long, default_value_t = 100_000)]
        atoms: usize,
    },
    /// Render one camera frame (frame.pgm, spots.json).
    Render {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        detuning_mhz: f64,
    },
    /// Two-phase detuning scan and Doppler-free peaks.
    Scan,
    /// Scan, then the isotope-shift table.
    Shifts,
    /// Saturated-absorption spectrum and Lamb dips.
    Satspec {
        #[arg(long)]
        pump_off: bool,
    },
    /// Fit mean beam velocity to Doppler-shifted centres.
    FitDoppler {
        /// CSV with theta_deg, frequency_hz, sigma_hz.
        #[arg(long = "in", conflicts_with = "synthesize")]
        input: Option<PathBuf>,
        /// Use synthetic points at the configured angles.
        #[arg(long, requires = "v")]
        synthesize: bool,
        /// Velocity for synthetic points, m/s.
        #[arg(long)]
        v: Option<f64>,
        /// Noise for synthetic points, MHz (0 = noiseless).
        #[arg(long, default_value_t = 0.0)]
        sigma_mhz: f64,
    },
    /// Shift table, saturation/spot comparison and velocity fit.
    Report,
    /// Run the lab HTTP server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 10_000)]
        atoms: usize,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(SpotError::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let cfg = load_config(&cli)?;
    let exp = Experiment::new(cfg.clone())?;
    match cli.command {
        Command::Isotopes => {
            println!("{:<14} {:<34} {:>10} {:>10} {:>8}  cluster", "line", "transition", "shift", "reported", "abund.");
            for l in &exp.catalog.lines {
                println!(
                    "{:<14} {:<34} {:>10.1} {:>10.1} {:>8.5}  {}",
                    l.id().to_string(),
                    l.hyperfine_label,
                    l.shift_from_174 / MHZ,
                    l.reported_shift / MHZ,
                    l.abundance,
                    l.cluster_id.0
                );
            }
            let p = exp.isotopes()?;
            eprintln!("wrote {}", p.display());
        }
        Command::Beam { dump, atoms } => {
            let oven = cfg.oven(&exp.catalog)?;
            let mc = mean_axial_velocity(&oven, &exp.catalog, atoms, cfg.seed)?;
            println!("temperature_k        {:.2}", oven.temperature);
            println!("cone_half_angle_deg  {:.3}", oven.max_polar_angle().to_degrees());
            println!(
                "mean_axial_velocity  {:.2} m/s (analytic {:.2})",
                mc.mean,
                analytic_mean_axial_velocity(oven.temperature, &oven.composition, &exp.catalog)
            );
            println!("standard_error       {:.3} m/s", mc.standard_error);
            if dump {
                let p = exp.dump_atoms(atoms)?;
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Render { detuning_mhz } => {
            let r = exp.render(detuning_mhz * MHZ)?;
            match &r.alignment {
                Some(a) => println!(
                    "detuning {:.1} MHz: {} spots, perp residual {:.2} um, zigzag {:.2} um",
                    detuning_mhz,
                    a.spots_used,
                    a.perp_residual * 1e6,
                    a.zigzag * 1e6
                ),
                None => println!("detuning {detuning_mhz:.1} MHz: fewer than three spots"),
            }
            eprintln!("wrote {}", exp.out().join("frame.pgm").display());
        }
        Command::Scan => {
            let s = exp.scan()?;
            for p in &s.peaks {
                let lines: Vec<String> = p.assigned_lines.iter().map(|l| l.to_string()).collect();
                println!(
                    "{:.7} THz  {:>8.1} MHz  {}{}",
                    p.center / THZ,
                    (p.center - exp.catalog.transition.f_ref) / MHZ,
                    lines.join(" "),
                    if p.merged { "  (unresolved)" } else { "" }
                );
            }
            eprintln!("{} scan points, wrote {}", s.trace.points.len(), exp.out().join("scan_trace.csv").display());
        }
        Command::Shifts => {
            let (_, checks) = exp.shifts()?;
            for c in &checks {
                println!(
                    "{:<14} {:>8.1} ± {:>3.0} MHz  catalog {:>8.1}  {}",
                    c.line,
                    c.shift_mhz,
                    c.sigma_mhz,
                    c.catalog_mhz,
                    if c.pass { "PASS" } else { "FAIL" }
                );
            }
            eprintln!("wrote {}", exp.out().join("shifts.csv").display());
        }
        Command::Satspec { pump_off } => {
            let mut cfg = cfg.clone();
            if pump_off {
                cfg.satspec.pump_on = false;
            }
            let exp = Experiment::new(cfg)?;
            let s = exp.satspec()?;
            for d in &s.dips {
                let lines: Vec<String> = d.assigned_lines.iter().map(|l| l.to_string()).collect();
                println!("{:.7} THz  {:>8.1} MHz  {}", d.center / THZ, (d.center - exp.catalog.transition.f_ref) / MHZ, lines.join(" "));
            }
            eprintln!("wrote {}", exp.out().join("spectrum.csv").display());
        }
        Command::FitDoppler { input, synthesize, v, sigma_mhz } => {
            let data = if let Some(p) = input {
                read_doppler_csv(&p)?
            } else if synthesize {
                let Some(v) = v else { bail!(SpotError::Config("--synthesize needs --v".into())) };
                exp.synthetic_series(v, sigma_mhz * MHZ)?
            } else {
                exp.doppler_series()?
            };
            let r = exp.fit_doppler(&data)?;
            print!("{}", json_string(&exp.prov, &FitSummary::new(&r))?);
        }
        Command::Report => {
            let s = exp.report()?;
            println!("shifts: {}/{} within tolerance", s.shifts_passed, s.shifts.len());
            for a in &s.absolute {
                println!(
                    "feature {}: saturation {} spot {} (methods differ {} MHz)",
                    a.label,
                    a.saturation_thz.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
                    a.spot_thz.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
                    a.methods_differ_mhz.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into())
                );
            }
            println!(
                "velocity: {:.1} ± {:.1} m/s (configured flux mean {:.1})",
                s.doppler.v_mean, s.doppler.sigma_v, s.doppler_configured_velocity
            );
            eprintln!("wrote {}", exp.out().join("report.json").display());
        }
        Command::Serve { port, atoms } => {
            let mut lab = LabConfig::new(exp.catalog.clone(), cfg.seed);
            lab.atoms = atoms;
            lab.setup = cfg.scan_setup(&exp.catalog)?;
            lab.log_path = Some(cfg.out.join("marks.csv"));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(SocketAddr::from(([127, 0, 0, 1], port)), lab))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<SpotError>().map(SpotError::exit_code).unwrap_or(3);
            ExitCode::from(code as u8)
        }
    }
}
