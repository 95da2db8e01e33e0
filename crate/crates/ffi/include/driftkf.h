#ifndef DRIFTKF_H
#define DRIFTKF_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DkfStatus {
  DKF_STATUS_OK = 0,
  DKF_STATUS_NULL_POINTER = 1,
  DKF_STATUS_INVALID_ARGUMENT = 2,
  DKF_STATUS_OUT_OF_RANGE = 3,
  DKF_STATUS_DIVERGED = 4,
  DKF_STATUS_INTERNAL = 5,
} DkfStatus;

typedef enum DkfCase {
  DKF_CASE_STATIC = 0,
  DKF_CASE_ASCENDING = 1,
  DKF_CASE_ALTERNATING = 2,
} DkfCase;

typedef enum DkfMethod {
  DKF_METHOD_RLS = 0,
  DKF_METHOD_ENKF = 1,
  DKF_METHOD_ENKF_STAR = 2,
} DkfMethod;

/**
 * Simulated, noisy and ploughing-filtered force signal.
 */
typedef struct DkfSignal DkfSignal;

/**
 * Coefficient estimates and force errors, one entry per corrected sample.
 */
typedef struct DkfTrace DkfTrace;

typedef struct DkfCoefficients {
  double kt;
  double mt;
  double kr;
  double mr;
} DkfCoefficients;

/**
 * One corrected sample. Forces in N, chip thickness in mm.
 */
typedef struct DkfSample {
  size_t index;
  double spindle_angle;
  double h_sum;
  double ft_clean;
  double fr_clean;
  double ft_noisy;
  double fr_noisy;
  struct DkfCoefficients truth;
} DkfSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *dkf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dkf_version(void);

/**
 * Kienzle force on one disk of width `b` at chip thickness `h`.
 *
 * # Safety
 * `coeffs`, `ft` and `fr` must be valid pointers or null.
 */
enum DkfStatus dkf_kienzle_force(const struct DkfCoefficients *coeffs,
                                 double b,
                                 double h,
                                 double *ft,
                                 double *fr);

/**
 * Simulates the reference side-milling benchmark for `n_rev` revolutions,
 * adds noise at the linear ratio `snr` and drops ploughing samples.
 *
 * # Safety
 * `out` must be a valid pointer or null. On success `*out` receives a
 * handle to release with [`dkf_signal_free`].
 */
enum DkfStatus dkf_signal_simulate(enum DkfCase case_kind,
                                   uint32_t n_rev,
                                   double snr,
                                   uint64_t seed,
                                   struct DkfSignal **out);

/**
 * Number of corrected samples; 0 for a null handle.
 *
 * # Safety
 * `signal` must be null or a live handle from [`dkf_signal_simulate`].
 */
size_t dkf_signal_len(const struct DkfSignal *signal);

/**
 * # Safety
 * `signal` must be null or a live handle; `out` must be valid or null.
 */
enum DkfStatus dkf_signal_get(const struct DkfSignal *signal, size_t index, struct DkfSample *out);

/**
 * Per-channel noise standard deviation of the signal.
 *
 * # Safety
 * `signal` must be null or a live handle; `sigma_t` and `sigma_r` valid or null.
 */
enum DkfStatus dkf_signal_noise(const struct DkfSignal *signal, double *sigma_t, double *sigma_r);

/**
 * # Safety
 * `signal` must be null or a handle not yet freed.
 */
void dkf_signal_free(struct DkfSignal *signal);

/**
 * Identifies the coefficients of `signal` from one initial ensemble of
 * `ensemble_size` members (0 selects the default). `step` and `lambda` are
 * only read for [`DkfMethod::EnkfStar`]. A diverged run still yields a
 * trace; check [`dkf_trace_divergence`].
 *
 * # Safety
 * `signal` must be a live handle and `out` a valid pointer. On success
 * `*out` receives a handle to release with [`dkf_trace_free`].
 */
enum DkfStatus dkf_identify(const struct DkfSignal *signal,
                            enum DkfMethod method,
                            uint32_t step,
                            double lambda,
                            size_t ensemble_size,
                            uint64_t seed,
                            struct DkfTrace **out);

/**
 * # Safety
 * `trace` must be null or a live handle from [`dkf_identify`].
 */
size_t dkf_trace_len(const struct DkfTrace *trace);

/**
 * Coefficient estimate and tangential/radial force error after sample `index`.
 *
 * # Safety
 * `trace` must be null or a live handle. Output pointers must be valid;
 * `error_t` and `error_r` may be null when not needed.
 */
enum DkfStatus dkf_trace_get(const struct DkfTrace *trace,
                             size_t index,
                             struct DkfCoefficients *coeffs,
                             double *error_t,
                             double *error_r);

/**
 * Writes the first divergent sample to `*sample` and returns `Diverged`,
 * or returns `Ok` when the run stayed finite.
 *
 * # Safety
 * `trace` must be null or a live handle; `sample` valid or null.
 */
enum DkfStatus dkf_trace_divergence(const struct DkfTrace *trace, size_t *sample);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void dkf_trace_free(struct DkfTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTKF_H */
