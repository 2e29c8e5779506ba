//! C interface. Objects cross the boundary as opaque handles; every fallible
//! call returns a `SpotlabStatus` and leaves a message for
//! `spotlab_last_error` on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spotlab::config::RunConfig;
use spotlab::dopplerfit::{doppler_shift, fit, DopplerDataset, DopplerRecord};
use spotlab::experiments::Experiment;
use spotlab::spectro::PeakEstimate;
use spotlab::ybdata::PhysicalConstants;
use spotlab::SpotError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpotlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    InsufficientData = 5,
    RankDeficient = 6,
    Numerical = 7,
    Precondition = 8,
    NotFound = 9,
    Io = 10,
    OutOfRange = 11,
    Internal = 12,
}

/// Experiment built from a run configuration.
pub struct SpotlabExperiment {
    inner: Experiment,
    hash: CString,
}

/// Peaks or dips returned by a scan.
pub struct SpotlabPeaks {
    peaks: Vec<PeakEstimate>,
    labels: Vec<CString>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpotlabPeak {
    /// Absolute frequency, Hz.
    pub center_hz: f64,
    pub width_fwhm_hz: f64,
    pub amplitude: f64,
    pub n_lines: usize,
    pub merged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpotlabFit {
    /// m/s.
    pub v_mean: f64,
    pub sigma_v: f64,
    /// Hz.
    pub f0: f64,
    pub sigma_f0: f64,
    /// NaN with fewer than three points.
    pub chi2_per_dof: f64,
    /// Row-major covariance of (f0, b), Hz².
    pub covariance: [f64; 4],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SpotError) -> SpotlabStatus {
    match e {
        SpotError::Config(_) => SpotlabStatus::Config,
        SpotError::Domain(_) | SpotError::DegeneratePair(_) => SpotlabStatus::Domain,
        SpotError::InsufficientData(_) | SpotError::EmptySequence(_) => SpotlabStatus::InsufficientData,
        SpotError::RankDeficient(_) => SpotlabStatus::RankDeficient,
        SpotError::Numerical(_) => SpotlabStatus::Numerical,
        SpotError::Precondition(_) => SpotlabStatus::Precondition,
        SpotError::NotFound(_) | SpotError::ReferenceMissing(_) => SpotlabStatus::NotFound,
        SpotError::Io(_) => SpotlabStatus::Io,
    }
}

fn fail(status: SpotlabStatus, msg: impl Into<String>) -> SpotlabStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), SpotlabStatus>) -> SpotlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpotlabStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(SpotlabStatus::Internal, "panic inside spotlab"),
    }
}

fn lift<T>(r: spotlab::Result<T>) -> Result<T, SpotlabStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, SpotlabStatus> {
    if p.is_null() {
        return Err(fail(SpotlabStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SpotlabStatus::InvalidUtf8, "string is not UTF-8"))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), SpotlabStatus> {
    if p.is_null() {
        Err(fail(SpotlabStatus::NullPointer, format!("null {what}")))
    } else {
        Ok(())
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn spotlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL after a
/// success. Valid until the next spotlab call on the same thread.
#[no_mangle]
pub extern "C" fn spotlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds an experiment from TOML text; NULL selects the defaults.
///
/// # Safety
/// `config_toml` is NULL or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_experiment_new(config_toml: *const c_char, out: *mut *mut SpotlabExperiment) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        *out = ptr::null_mut();
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            lift(RunConfig::from_toml_str(str_arg(config_toml)?))?
        };
        let inner = lift(Experiment::new(cfg))?;
        let hash = CString::new(inner.prov.config_hash.clone()).unwrap_or_default();
        *out = Box::into_raw(Box::new(SpotlabExperiment { inner, hash }));
        Ok(())
    })
}

/// # Safety
/// `exp` is NULL or a handle from `spotlab_experiment_new`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spotlab_experiment_free(exp: *mut SpotlabExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Configuration hash; owned by the handle.
///
/// # Safety
/// `exp` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn spotlab_experiment_config_hash(exp: *const SpotlabExperiment) -> *const c_char {
    match exp.as_ref() {
        Some(e) => e.hash.as_ptr(),
        None => ptr::null(),
    }
}

fn peaks_handle(peaks: Vec<PeakEstimate>) -> *mut SpotlabPeaks {
    let labels = peaks
        .iter()
        .map(|p| {
            let s: Vec<String> = p.assigned_lines.iter().map(|l| l.to_string()).collect();
            CString::new(s.join(" ")).unwrap_or_default()
        })
        .collect();
    Box::into_raw(Box::new(SpotlabPeaks { peaks, labels }))
}

/// Runs the spot scan and returns its Doppler-free peaks. Writes no files.
///
/// # Safety
/// `exp` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_experiment_scan(exp: *const SpotlabExperiment, out: *mut *mut SpotlabPeaks) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        *out = ptr::null_mut();
        let e = exp.as_ref().ok_or_else(|| fail(SpotlabStatus::NullPointer, "null experiment"))?;
        let s = lift(e.inner.compute_scan())?;
        *out = peaks_handle(s.peaks);
        Ok(())
    })
}

/// Simulates the saturated-absorption spectrum and returns its dips.
///
/// # Safety
/// `exp` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_experiment_satspec(exp: *const SpotlabExperiment, out: *mut *mut SpotlabPeaks) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        *out = ptr::null_mut();
        let e = exp.as_ref().ok_or_else(|| fail(SpotlabStatus::NullPointer, "null experiment"))?;
        let s = lift(e.inner.compute_satspec())?;
        *out = peaks_handle(s.dips);
        Ok(())
    })
}

/// Velocity fit on the simulated tilted-beam series of the experiment.
///
/// # Safety
/// `exp` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_experiment_fit_velocity(exp: *const SpotlabExperiment, out: *mut SpotlabFit) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        let e = exp.as_ref().ok_or_else(|| fail(SpotlabStatus::NullPointer, "null experiment"))?;
        let data = lift(e.inner.doppler_series())?;
        *out = fit_summary(&lift(e.inner.fit_doppler(&data))?);
        Ok(())
    })
}

/// # Safety
/// `peaks` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spotlab_peaks_len(peaks: *const SpotlabPeaks) -> usize {
    peaks.as_ref().map_or(0, |p| p.peaks.len())
}

/// # Safety
/// `peaks` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_peaks_get(peaks: *const SpotlabPeaks, index: usize, out: *mut SpotlabPeak) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        let p = peaks.as_ref().ok_or_else(|| fail(SpotlabStatus::NullPointer, "null peaks"))?;
        let pk = p
            .peaks
            .get(index)
            .ok_or_else(|| fail(SpotlabStatus::OutOfRange, format!("index {index} of {}", p.peaks.len())))?;
        *out = SpotlabPeak {
            center_hz: pk.center,
            width_fwhm_hz: pk.width_fwhm,
            amplitude: pk.amplitude,
            n_lines: pk.assigned_lines.len(),
            merged: pk.merged,
        };
        Ok(())
    })
}

/// Space-separated line labels of one peak, e.g. "173(F'=5/2)". Owned by the
/// handle; NULL when the index is out of range.
///
/// # Safety
/// `peaks` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spotlab_peaks_label(peaks: *const SpotlabPeaks, index: usize) -> *const c_char {
    peaks.as_ref().and_then(|p| p.labels.get(index)).map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `peaks` is NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spotlab_peaks_free(peaks: *mut SpotlabPeaks) {
    if !peaks.is_null() {
        drop(Box::from_raw(peaks));
    }
}

/// Doppler shift (Hz) for an atom at speed `v` crossing a beam at `theta_deg`.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_doppler_shift(f0: f64, v: f64, theta_deg: f64, out: *mut f64) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        *out = lift(doppler_shift(f0, v, theta_deg, PhysicalConstants::default().c))?;
        Ok(())
    })
}

fn fit_summary(r: &spotlab::dopplerfit::DopplerFitResult) -> SpotlabFit {
    let c = r.covariance;
    SpotlabFit {
        v_mean: r.v_mean,
        sigma_v: r.sigma_v(),
        f0: r.f0,
        sigma_f0: r.sigma_f0(),
        chi2_per_dof: r.chi2_per_dof.unwrap_or(f64::NAN),
        covariance: [c[0][0], c[0][1], c[1][0], c[1][1]],
    }
}

/// Weighted fit of mean velocity to `n` (angle, frequency, sigma) triples.
///
/// # Safety
/// The three arrays hold `n` elements each; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn spotlab_fit_doppler(
    theta_deg: *const f64,
    frequency_hz: *const f64,
    sigma_hz: *const f64,
    n: usize,
    out: *mut SpotlabFit,
) -> SpotlabStatus {
    guard(|| {
        non_null(out, "output pointer")?;
        if n > 0 {
            non_null(theta_deg, "angle array")?;
            non_null(frequency_hz, "frequency array")?;
            non_null(sigma_hz, "sigma array")?;
        }
        let records = (0..n)
            .map(|i| DopplerRecord {
                theta_deg: *theta_deg.add(i),
                measured_frequency: *frequency_hz.add(i),
                sigma: *sigma_hz.add(i),
            })
            .collect();
        let data = lift(DopplerDataset::new(records))?;
        *out = fit_summary(&lift(fit(&data, PhysicalConstants::default().c))?);
        Ok(())
    })
}
