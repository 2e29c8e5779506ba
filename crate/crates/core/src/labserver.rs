//! HTTP JSON service holding one live virtual bench: the operator tunes the
//! laser, watches the four spots and marks detunings where they line up.
//! Ground-truth line positions stay hidden until `/api/reveal`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use crate::artifact::{write_csv, Provenance};
use crate::beamsim::sample_atoms;
use crate::error::{Result, SpotError};
use crate::photonics::LaserState;
use crate::spectro::ScanSetup;
use crate::spotfield::{alignment, extract_centroids, pair_offsets, AlignmentResult, CrossingTable, PairOffsets, Spot};
use crate::ybdata::{Catalog, LineId, MHZ, THZ};

/// Largest side of a served intensity grid, pixels.
pub const MAX_GRID_SIDE: usize = 128;

/// Accepted control ranges.
pub const DETUNING_RANGE_MHZ: (f64, f64) = (-5000.0, 5000.0);
pub const ANGLE_RANGE_DEG: (f64, f64) = (20.0, 160.0);
pub const TEMPERATURE_RANGE_K: (f64, f64) = (50.0, 3000.0);

#[derive(Debug, Clone)]
pub struct LabConfig {
    pub seed: u64,
    pub atoms: usize,
    pub setup: ScanSetup,
    pub catalog: Catalog,
    /// Where the mark log is written on shutdown, if anywhere.
    pub log_path: Option<PathBuf>,
}

impl LabConfig {
    pub fn new(catalog: Catalog, seed: u64) -> Self {
        LabConfig { seed, atoms: 10_000, setup: ScanSetup::default_for(&catalog), catalog, log_path: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpotSummary {
    pub beam_index: u8,
    pub found: bool,
    pub x_mm: Option<f64>,
    pub y_mm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FramePayload {
    /// Control sequence number this frame was rendered for.
    pub sequence: u64,
    pub detuning_mhz: f64,
    pub angle_deg: f64,
    pub temperature_k: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_um: f64,
    pub x_min_mm: f64,
    pub y_min_mm: f64,
    /// Row-major intensities scaled to a peak of 1, row 0 at the smallest y.
    pub grid: Vec<f32>,
    pub spots: Vec<SpotSummary>,
    pub alignment: Option<AlignmentResult>,
    pub pair_offsets: PairOffsets,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mark {
    pub label: String,
    pub detuning_mhz: f64,
    pub frequency_thz: f64,
    pub sequence: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabState {
    pub sequence: u64,
    pub detuning_mhz: f64,
    pub angle_deg: f64,
    pub temperature_k: f64,
    pub frame: FramePayload,
    pub marks: Vec<Mark>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Control {
    pub detuning_mhz: Option<f64>,
    pub angle_deg: Option<f64>,
    pub temperature_k: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkRequest {
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruthLine {
    pub line: String,
    pub shift_mhz: f64,
    pub frequency_thz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MarkError {
    pub label: String,
    pub frequency_thz: f64,
    /// The line named by the label, or the nearest line when the label names none.
    pub matched_line: String,
    pub error_mhz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Reveal {
    pub lines: Vec<TruthLine>,
    pub errors: Vec<MarkError>,
}

struct Bench {
    sequence: u64,
    detuning: f64,
    angle_deg: f64,
    temperature: f64,
    table: CrossingTable,
    frame: FramePayload,
    marks: Vec<Mark>,
}

pub struct Lab {
    config: LabConfig,
    bench: RwLock<Bench>,
}

fn build_table(config: &LabConfig, angle_deg: f64, temperature: f64) -> Result<CrossingTable> {
    let mut setup = config.setup.clone().with_angle(angle_deg);
    setup.oven.temperature = temperature;
    setup.validate()?;
    let atoms = sample_atoms(&setup.oven, &config.catalog, config.atoms, config.seed)?;
    let beams = setup.beams.beams(&setup.oven)?;
    CrossingTable::new(&atoms, &beams, crate::spotfield::ImagePlane::for_oven(&setup.oven), &config.catalog)
}

fn render(config: &LabConfig, b: &Bench) -> Result<FramePayload> {
    let frame = b.table.render(&LaserState::new(b.detuning)?, &config.catalog, &config.setup.frame)?;
    let beams = b.table.beams();
    let spots = extract_centroids(&frame, beams);
    let align = alignment(&spots, beams, b.table.plane()).ok();
    let small = frame.downsample(MAX_GRID_SIDE);
    let peak = small.pixels.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    Ok(FramePayload {
        sequence: b.sequence,
        detuning_mhz: b.detuning / MHZ,
        angle_deg: b.angle_deg,
        temperature_k: b.temperature,
        width: small.width,
        height: small.height,
        pixel_pitch_um: small.pixel_pitch * 1e6,
        x_min_mm: small.x_min * 1e3,
        y_min_mm: small.y_min * 1e3,
        grid: small.pixels.iter().map(|v| (v * scale) as f32).collect(),
        spots: spots
            .iter()
            .map(|s| SpotSummary {
                beam_index: s.beam_index(),
                found: matches!(s, Spot::Found(_)),
                x_mm: s.centroid().map(|c| c.centroid.x * 1e3),
                y_mm: s.centroid().map(|c| c.centroid.y * 1e3),
            })
            .collect(),
        alignment: align,
        pair_offsets: pair_offsets(&spots),
    })
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

impl Lab {
    pub fn new(config: LabConfig) -> Result<Self> {
        let angle = config.setup.beams.angle_deg;
        let temperature = config.setup.oven.temperature;
        let table = build_table(&config, angle, temperature)?;
        let mut bench = Bench {
            sequence: 0,
            detuning: 0.0,
            angle_deg: angle,
            temperature,
            table,
            frame: FramePayload {
                sequence: 0,
                detuning_mhz: 0.0,
                angle_deg: angle,
                temperature_k: temperature,
                width: 0,
                height: 0,
                pixel_pitch_um: 0.0,
                x_min_mm: 0.0,
                y_min_mm: 0.0,
                grid: Vec::new(),
                spots: Vec::new(),
                alignment: None,
                pair_offsets: PairOffsets { pair24: None, pair13: None },
            },
            marks: Vec::new(),
        };
        bench.frame = render(&config, &bench)?;
        Ok(Lab { config, bench: RwLock::new(bench) })
    }

    fn read(&self) -> RwLockReadGuard<'_, Bench> {
        self.bench.read().unwrap_or_else(|p| p.into_inner())
    }

    /// The single writer: control changes and marks go through here in order.
    fn write(&self) -> RwLockWriteGuard<'_, Bench> {
        self.bench.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn state(&self) -> LabState {
        let b = self.read();
        LabState {
            sequence: b.sequence,
            detuning_mhz: b.detuning / MHZ,
            angle_deg: b.angle_deg,
            temperature_k: b.temperature,
            frame: b.frame.clone(),
            marks: b.marks.clone(),
        }
    }

    pub fn frame(&self) -> FramePayload {
        self.read().frame.clone()
    }

    /// Applies a control change and re-renders; nothing changes on error.
    pub fn control(&self, c: &Control) -> Result<LabState> {
        if let Some(d) = c.detuning_mhz {
            if !in_range(d, DETUNING_RANGE_MHZ) {
                return Err(SpotError::Domain(format!("detuning {d} MHz outside {DETUNING_RANGE_MHZ:?}")));
            }
        }
        if let Some(a) = c.angle_deg {
            if !in_range(a, ANGLE_RANGE_DEG) {
                return Err(SpotError::Domain(format!("angle {a} deg outside {ANGLE_RANGE_DEG:?}")));
            }
        }
        if let Some(t) = c.temperature_k {
            if !in_range(t, TEMPERATURE_RANGE_K) {
                return Err(SpotError::Domain(format!("temperature {t} K outside {TEMPERATURE_RANGE_K:?}")));
            }
        }
        {
            let mut b = self.write();
            let angle = c.angle_deg.unwrap_or(b.angle_deg);
            let temperature = c.temperature_k.unwrap_or(b.temperature);
            if angle != b.angle_deg || temperature != b.temperature {
                b.table = build_table(&self.config, angle, temperature)?;
                b.angle_deg = angle;
                b.temperature = temperature;
            }
            if let Some(d) = c.detuning_mhz {
                b.detuning = d * MHZ;
            }
            b.sequence += 1;
            b.frame = render(&self.config, &b)?;
        }
        Ok(self.state())
    }

    pub fn mark(&self, label: &str) -> Result<Mark> {
        let label = label.trim();
        if label.is_empty() {
            return Err(SpotError::Domain("mark label must not be empty".into()));
        }
        let mut b = self.write();
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let mark = Mark {
            label: label.to_string(),
            detuning_mhz: b.detuning / MHZ,
            frequency_thz: (self.config.catalog.transition.f_ref + b.detuning) / THZ,
            sequence: b.sequence,
            timestamp_ms,
        };
        b.marks.push(mark.clone());
        Ok(mark)
    }

    pub fn reveal(&self) -> Reveal {
        let cat = &self.config.catalog;
        let lines = cat
            .lines
            .iter()
            .map(|l| TruthLine {
                line: l.id().to_string(),
                shift_mhz: l.shift_from_174 / MHZ,
                frequency_thz: (cat.transition.f_ref + l.shift_from_174) / THZ,
            })
            .collect();
        let errors = self
            .read()
            .marks
            .iter()
            .map(|m| {
                let f = m.frequency_thz * THZ;
                let named = m.label.parse::<LineId>().ok().and_then(|id| cat.line_by_id(&id).ok());
                let line = named.unwrap_or_else(|| {
                    cat.lines
                        .iter()
                        .min_by(|a, b| {
                            (cat.transition.f_ref + a.shift_from_174 - f)
                                .abs()
                                .total_cmp(&(cat.transition.f_ref + b.shift_from_174 - f).abs())
                        })
                        .expect("catalog has lines")
                });
                MarkError {
                    label: m.label.clone(),
                    frequency_thz: m.frequency_thz,
                    matched_line: line.id().to_string(),
                    error_mhz: (f - cat.transition.f_ref - line.shift_from_174) / MHZ,
                }
            })
            .collect();
        Reveal { lines, errors }
    }

    /// Writes the mark log as CSV, if a path was configured.
    pub fn dump_log(&self) -> Result<Option<PathBuf>> {
        let Some(path) = self.config.log_path.clone() else { return Ok(None) };
        let rows: Vec<Vec<String>> = self
            .read()
            .marks
            .iter()
            .map(|m| {
                vec![
                    m.label.clone(),
                    format!("{:.3}", m.detuning_mhz),
                    format!("{:.9}", m.frequency_thz),
                    m.sequence.to_string(),
                    m.timestamp_ms.to_string(),
                ]
            })
            .collect();
        let prov = Provenance::new("serve", self.config.seed);
        write_csv(&path, &prov, &["label", "detuning_mhz", "frequency_thz", "sequence", "timestamp_ms"], &rows)?;
        Ok(Some(path))
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn unprocessable(msg: impl Into<String>) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(ErrorBody { error: msg.into() })).into_response()
}

fn lab_error(e: SpotError) -> Response {
    match e {
        SpotError::Domain(_) | SpotError::Config(_) => unprocessable(e.to_string()),
        other => (StatusCode::INTERNAL_SERVER_ERROR, Json(ErrorBody { error: other.to_string() })).into_response(),
    }
}

async fn get_state(State(lab): State<Arc<Lab>>) -> Json<LabState> {
    Json(lab.state())
}

async fn get_frame(State(lab): State<Arc<Lab>>) -> Json<FramePayload> {
    Json(lab.frame())
}

async fn post_control(State(lab): State<Arc<Lab>>, body: std::result::Result<Json<Control>, JsonRejection>) -> Response {
    let Json(c) = match body {
        Ok(b) => b,
        Err(e) => return unprocessable(e.body_text()),
    };
    match lab.control(&c) {
        Ok(s) => Json(s).into_response(),
        Err(e) => lab_error(e),
    }
}

async fn post_mark(State(lab): State<Arc<Lab>>, body: std::result::Result<Json<MarkRequest>, JsonRejection>) -> Response {
    let Json(m) = match body {
        Ok(b) => b,
        Err(e) => return unprocessable(e.body_text()),
    };
    match lab.mark(&m.label) {
        Ok(mark) => Json(mark).into_response(),
        Err(e) => lab_error(e),
    }
}

async fn get_reveal(State(lab): State<Arc<Lab>>) -> Json<Reveal> {
    Json(lab.reveal())
}

pub fn router(lab: Arc<Lab>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/control", post(post_control))
        .route("/api/frame", get(get_frame))
        .route("/api/mark", post(post_mark))
        .route("/api/reveal", get(get_reveal))
        .layer(cors)
        .with_state(lab)
}

/// Serves until Ctrl-C, then dumps the mark log.
pub async fn serve(addr: SocketAddr, config: LabConfig) -> Result<()> {
    let lab = Arc::new(Lab::new(config)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("spotlab lab server on http://{}", listener.local_addr()?);
    axum::serve(listener, router(lab.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    lab.dump_log()?;
    Ok(())
}
