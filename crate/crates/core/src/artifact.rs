//! Output files. Every artifact carries the config hash and seed: CSV and PGM
//! in a leading `#` comment line, JSON as top-level fields.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::spotfield::FluorescenceFrame;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance { config_hash: config_hash.into(), seed }
    }

    pub fn comment(&self) -> String {
        format!("# spotlab {} config_hash={} seed={}", env!("CARGO_PKG_VERSION"), self.config_hash, self.seed)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// CSV with a provenance comment, then a header row and the records.
pub fn csv_string<R: AsRef<[String]>>(prov: &Provenance, header: &[&str], rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| crate::SpotError::Io(e.to_string()))?)
        .map_err(|e| crate::SpotError::Io(e.to_string()))?;
    Ok(format!("{}\n{body}", prov.comment()))
}

pub fn write_csv<R: AsRef<[String]>>(path: &Path, prov: &Provenance, header: &[&str], rows: &[R]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, csv_string(prov, header, rows)?)?;
    Ok(())
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    data: &'a T,
}

pub fn json_string<T: Serialize>(prov: &Provenance, data: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Wrapped { config_hash: &prov.config_hash, seed: prov.seed, data })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, data: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, json_string(prov, data)?)?;
    Ok(())
}

/// Binary 8-bit graymap scaled to the frame maximum, top row = largest y.
pub fn pgm_bytes(frame: &FluorescenceFrame, prov: &Provenance) -> Vec<u8> {
    let peak = frame.pixels.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut out = Vec::with_capacity(frame.width * frame.height + 96);
    let _ = write!(out, "P5\n{}\n{} {}\n255\n", prov.comment(), frame.width, frame.height);
    for j in (0..frame.height).rev() {
        for i in 0..frame.width {
            out.push((frame.get(i, j) * scale).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn write_pgm(path: &Path, frame: &FluorescenceFrame, prov: &Provenance) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, pgm_bytes(frame, prov))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamsim::OvenConfig;
    use crate::spotfield::{FrameSpec, ImagePlane};
    use crate::ybdata::Catalog;

    #[test]
    fn csv_has_provenance_line() {
        let p = Provenance::new("abc123", 7);
        let s = csv_string(&p, &["a", "b"], &[vec!["1".to_string(), "2".to_string()]]).unwrap();
        let mut lines = s.lines();
        assert!(lines.next().unwrap().contains("config_hash=abc123 seed=7"));
        assert_eq!(lines.next(), Some("a,b"));
        assert_eq!(lines.next(), Some("1,2"));
    }

    #[test]
    fn json_flattens_payload() {
        #[derive(Serialize)]
        struct D {
            v: f64,
        }
        let s = json_string(&Provenance::new("h", 3), &D { v: 1.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["config_hash"], "h");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["v"], 1.5);
    }

    #[test]
    fn pgm_layout() {
        let oven = OvenConfig::default_for(Catalog::natural());
        let spec = FrameSpec { pixel_pitch: 1e-3, ..FrameSpec::default() };
        let mut f = FluorescenceFrame::zeros(&spec, ImagePlane::for_oven(&oven));
        f.splat(f.pixel_center(2, 0), 4.0);
        let b = pgm_bytes(&f, &Provenance::new("h", 1));
        let text = String::from_utf8_lossy(&b[..40]).to_string();
        assert!(text.starts_with("P5\n# spotlab"));
        let header_end = b.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        assert_eq!(b.len() - header_end, f.width * f.height);
        // bottom image row holds j = 0
        let last_row = &b[b.len() - f.width..];
        assert_eq!(last_row[2], 255);
    }
}
