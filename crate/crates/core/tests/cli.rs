use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[scan]
atoms = 20000
coarse_step_mhz = 50.0
fine_step_mhz = 5.0

[satspec]
atoms = 20000
step_mhz = 4.0

[fit]
atoms = 20000
"#;

fn spotlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spotlab"))
        .args(["--out", dir.join("out").to_str().unwrap()])
        .args(args)
        .env_remove("SPOTLAB_THREADS")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn isotopes_lists_catalog() {
    let d = tempfile::tempdir().unwrap();
    let o = spotlab(d.path(), &["isotopes"]);
    assert!(o.status.success());
    let text = fs::read_to_string(d.path().join("out/isotopes.csv")).unwrap();
    assert!(text.starts_with("# spotlab"));
    // comment + header + 10 lines
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn synthetic_fit_recovers_velocity() {
    let d = tempfile::tempdir().unwrap();
    let o = spotlab(d.path(), &["fit-doppler", "--synthesize", "--v", "260"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["v_mean"].as_f64().unwrap() - 260.0).abs() < 1e-3);
    assert_eq!(v["n_points"], 8);
    assert!(v["config_hash"].as_str().unwrap().len() == 16);
}

#[test]
fn fit_from_csv() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("pts.csv");
    let c = 299_792_458.0_f64;
    let f0 = 751.5e12_f64;
    let mut s = String::from("# bench points\ntheta_deg,frequency_hz,sigma_hz\n");
    for a in [60.0_f64, 80.0, 100.0, 120.0] {
        s += &format!("{a},{},{}\n", f0 + f0 * 300.0 * a.to_radians().cos() / c, 1e6);
    }
    fs::write(&p, s).unwrap();
    let o = spotlab(d.path(), &["fit-doppler", "--in", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["v_mean"].as_f64().unwrap() - 300.0).abs() < 1e-2);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[scan]\nnonsense = 1\n").unwrap();
    assert_eq!(spotlab(d.path(), &["--config", bad.to_str().unwrap(), "isotopes"]).status.code(), Some(2));
    assert_eq!(spotlab(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(spotlab(d.path(), &["--threads", "0", "isotopes"]).status.code(), Some(2));

    let same = d.path().join("same.csv");
    fs::write(&same, "theta_deg,frequency_hz,sigma_hz\n70,1e14,1e6\n70,1e14,1e6\n70,1e14,1e6\n").unwrap();
    assert_eq!(spotlab(d.path(), &["fit-doppler", "--in", same.to_str().unwrap()]).status.code(), Some(4));

    let one = d.path().join("one.csv");
    fs::write(&one, "theta_deg,frequency_hz,sigma_hz\n70,1e14,1e6\n").unwrap();
    assert_eq!(spotlab(d.path(), &["fit-doppler", "--in", one.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn shifts_table_has_every_line() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let o = spotlab(d.path(), &["--config", &cfg, "shifts"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(d.path().join("out/shifts.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 10);
    assert!(d.path().join("out/peaks.json").exists());
}

#[test]
fn report_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let run = |sub: &str| {
        let out = d.path().join(sub);
        let o = Command::new(env!("CARGO_BIN_EXE_spotlab"))
            .args(["--config", &cfg, "--out", out.to_str().unwrap(), "report"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    for f in ["report.json", "shifts.csv", "spectrum.csv", "doppler_points.csv", "absolute.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        let y = fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let r: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 3);
}

#[test]
fn render_writes_frame() {
    let d = tempfile::tempdir().unwrap();
    let o = spotlab(d.path(), &["render", "--detuning-mhz", "-20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(d.path().join("out/frame.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n# spotlab"));
    let spots: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("out/spots.json")).unwrap()).unwrap();
    assert_eq!(spots["spots"].as_array().unwrap().len(), 4);
}
