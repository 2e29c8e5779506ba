#ifndef SPOTLAB_H
#define SPOTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpotlabStatus {
  SPOTLAB_STATUS_OK = 0,
  SPOTLAB_STATUS_NULL_POINTER = 1,
  SPOTLAB_STATUS_INVALID_UTF8 = 2,
  SPOTLAB_STATUS_CONFIG = 3,
  SPOTLAB_STATUS_DOMAIN = 4,
  SPOTLAB_STATUS_INSUFFICIENT_DATA = 5,
  SPOTLAB_STATUS_RANK_DEFICIENT = 6,
  SPOTLAB_STATUS_NUMERICAL = 7,
  SPOTLAB_STATUS_PRECONDITION = 8,
  SPOTLAB_STATUS_NOT_FOUND = 9,
  SPOTLAB_STATUS_IO = 10,
  SPOTLAB_STATUS_OUT_OF_RANGE = 11,
  SPOTLAB_STATUS_INTERNAL = 12,
} SpotlabStatus;

/**
 * Experiment built from a run configuration.
 */
typedef struct SpotlabExperiment SpotlabExperiment;

/**
 * Peaks or dips returned by a scan.
 */
typedef struct SpotlabPeaks SpotlabPeaks;

typedef struct SpotlabFit {
  /**
   * m/s.
   */
  double v_mean;
  double sigma_v;
  /**
   * Hz.
   */
  double f0;
  double sigma_f0;
  /**
   * NaN with fewer than three points.
   */
  double chi2_per_dof;
  /**
   * Row-major covariance of (f0, b), Hz².
   */
  double covariance[4];
} SpotlabFit;

typedef struct SpotlabPeak {
  /**
   * Absolute frequency, Hz.
   */
  double center_hz;
  double width_fwhm_hz;
  double amplitude;
  size_t n_lines;
  bool merged;
} SpotlabPeak;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *spotlab_version(void);

/**
 * Message for the most recent failure on this thread, or NULL after a
 * success. Valid until the next spotlab call on the same thread.
 */
const char *spotlab_last_error(void);

/**
 * Builds an experiment from TOML text; NULL selects the defaults.
 *
 * # Safety
 * `config_toml` is NULL or a NUL-terminated string; `out` is writable.
 */
enum SpotlabStatus spotlab_experiment_new(const char *config_toml, struct SpotlabExperiment **out);

/**
 * # Safety
 * `exp` is NULL or a handle from `spotlab_experiment_new`, not yet freed.
 */
void spotlab_experiment_free(struct SpotlabExperiment *exp);

/**
 * Configuration hash; owned by the handle.
 *
 * # Safety
 * `exp` is a live handle.
 */
const char *spotlab_experiment_config_hash(const struct SpotlabExperiment *exp);

/**
 * Runs the spot scan and returns its Doppler-free peaks. Writes no files.
 *
 * # Safety
 * `exp` is a live handle; `out` is writable.
 */
enum SpotlabStatus spotlab_experiment_scan(const struct SpotlabExperiment *exp,
                                           struct SpotlabPeaks **out);

/**
 * Simulates the saturated-absorption spectrum and returns its dips.
 *
 * # Safety
 * `exp` is a live handle; `out` is writable.
 */
enum SpotlabStatus spotlab_experiment_satspec(const struct SpotlabExperiment *exp,
                                              struct SpotlabPeaks **out);

/**
 * Velocity fit on the simulated tilted-beam series of the experiment.
 *
 * # Safety
 * `exp` is a live handle; `out` is writable.
 */
enum SpotlabStatus spotlab_experiment_fit_velocity(const struct SpotlabExperiment *exp,
                                                   struct SpotlabFit *out);

/**
 * # Safety
 * `peaks` is NULL or a live handle.
 */
size_t spotlab_peaks_len(const struct SpotlabPeaks *peaks);

/**
 * # Safety
 * `peaks` is a live handle; `out` is writable.
 */
enum SpotlabStatus spotlab_peaks_get(const struct SpotlabPeaks *peaks,
                                     size_t index,
                                     struct SpotlabPeak *out);

/**
 * Space-separated line labels of one peak, e.g. "173(F'=5/2)". Owned by the
 * handle; NULL when the index is out of range.
 *
 * # Safety
 * `peaks` is NULL or a live handle.
 */
const char *spotlab_peaks_label(const struct SpotlabPeaks *peaks, size_t index);

/**
 * # Safety
 * `peaks` is NULL or a live handle, not yet freed.
 */
void spotlab_peaks_free(struct SpotlabPeaks *peaks);

/**
 * Doppler shift (Hz) for an atom at speed `v` crossing a beam at `theta_deg`.
 *
 * # Safety
 * `out` is writable.
 */
enum SpotlabStatus spotlab_doppler_shift(double f0, double v, double theta_deg, double *out);

/**
 * Weighted fit of mean velocity to `n` (angle, frequency, sigma) triples.
 *
 * # Safety
 * The three arrays hold `n` elements each; `out` is writable.
 */
enum SpotlabStatus spotlab_fit_doppler(const double *theta_deg,
                                       const double *frequency_hz,
                                       const double *sigma_hz,
                                       size_t n,
                                       struct SpotlabFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPOTLAB_H */
