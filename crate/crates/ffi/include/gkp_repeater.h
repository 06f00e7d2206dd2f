#ifndef GKP_REPEATER_H
#define GKP_REPEATER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum GkpStatus {
  GKP_STATUS_OK = 0,
  GKP_STATUS_NULL_POINTER = 1,
  GKP_STATUS_INVALID_ARGUMENT = 2,
  GKP_STATUS_NUMERIC_FAILURE = 3,
  // The CC threshold search found no crossing in its bracket.
  GKP_STATUS_NO_CROSSING = 4,
  GKP_STATUS_PANIC = 5,
} GkpStatus;

typedef enum GkpStrategy {
  GKP_STRATEGY_PER_STEP_PREAMP = 0,
  GKP_STRATEGY_MEAN_ADJUSTED = 1,
  GKP_STRATEGY_MEAN_ADJUSTED_ARTIFICIAL_LOSS = 2,
  GKP_STRATEGY_CC = 3,
  GKP_STRATEGY_AUTO = 4,
  // Only reported for the correctionless baseline.
  GKP_STRATEGY_NONE = 5,
} GkpStrategy;

typedef enum GkpPauliModel {
  GKP_PAULI_MODEL_SIMPLIFIED = 0,
  GKP_PAULI_MODEL_STRIPED = 1,
} GkpPauliModel;

typedef enum GkpExpectation {
  GKP_EXPECTATION_CLOSED_FORM = 0,
  GKP_EXPECTATION_NUMERIC = 1,
} GkpExpectation;

typedef enum GkpQberThreshold {
  GKP_QBER_THRESHOLD_WORKING = 0,
  GKP_QBER_THRESHOLD_EXACT_ROOT = 1,
} GkpQberThreshold;

// Opaque chain configuration plus evaluation options.
typedef struct GkpConfig GkpConfig;

// Rates are per time step, except `s_hz`.
typedef struct GkpRateResult {
  double length_km;
  uint64_t n;
  enum GkpStrategy strategy;
  double p;
  double alpha;
  double sigma_add_sq;
  double sigma_tot_sq;
  double p_pauli;
  double qber;
  double r;
  double raw_rate;
  double s;
  double s_hz;
} GkpRateResult;

typedef struct GkpNumericAverage {
  enum GkpStrategy strategy;
  double sigma_add_sq;
  double p_pauli;
  double qber;
  double tail_mass;
  bool tail_warning;
  // Key per step from the averaged QBER.
  double s;
} GkpNumericAverage;

typedef struct GkpSimulationResult {
  double qber_mean;
  double qber_stderr;
  double mean_completion_steps;
  double completion_stderr;
  double sigma_add_mean;
  double sigma_add_variance;
  double s;
  double s_stderr;
} GkpSimulationResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a configuration with `gamma_sq = 0`, the `Auto` strategy and
// default evaluation options.
//
// # Safety
// `out` must be valid for writing one pointer. The handle written there must
// be released with [`gkp_config_free`].
enum GkpStatus gkp_config_new(double length_km,
                              uint64_t segments,
                              double p_link,
                              double delta_sq,
                              double t_coh,
                              struct GkpConfig **out);

// # Safety
// `config` is null or a handle from [`gkp_config_new`] not yet freed.
void gkp_config_free(struct GkpConfig *config);

// # Safety
// `config` is a live handle from [`gkp_config_new`].
enum GkpStatus gkp_config_set_gamma_sq(struct GkpConfig *config, double gamma_sq);

// # Safety
// `config` is a live handle from [`gkp_config_new`].
enum GkpStatus gkp_config_set_strategy(struct GkpConfig *config, enum GkpStrategy strategy);

// # Safety
// `config` is a live handle from [`gkp_config_new`].
enum GkpStatus gkp_config_set_options(struct GkpConfig *config,
                                      enum GkpPauliModel pauli_model,
                                      enum GkpExpectation expectation,
                                      enum GkpQberThreshold qber_threshold);

// Closed-form key rate.
//
// # Safety
// `config` is a live handle; `out` is valid for writes.
enum GkpStatus gkp_analytic_rate(const struct GkpConfig *config, struct GkpRateResult *out);

// Error probability averaged over the first `truncation` waiting times.
//
// # Safety
// `config` is a live handle; `out` is valid for writes.
enum GkpStatus gkp_numeric_average(const struct GkpConfig *config,
                                   uint64_t truncation,
                                   struct GkpNumericAverage *out);

// Monte Carlo chain simulation. `workers = 0` uses all cores; results do
// not depend on it.
//
// # Safety
// `config` is a live handle; `out` is valid for writes.
enum GkpStatus gkp_simulate(const struct GkpConfig *config,
                            uint64_t trials,
                            uint64_t inner_iterations,
                            uint64_t seed,
                            uint32_t workers,
                            struct GkpSimulationResult *out);

// Correctionless baseline with depolarization `mu` and the default noise
// mapping. Fields that do not apply are NaN.
//
// # Safety
// `config` is a live handle; `out` is valid for writes.
enum GkpStatus gkp_correctionless_rate(const struct GkpConfig *config,
                                       double mu,
                                       struct GkpRateResult *out);

// Segment count in `[n_min, n_max]` maximizing the rate in Hz. The
// configured segment count is ignored.
//
// # Safety
// `config` is a live handle; `n_opt` and `out` are valid for writes.
enum GkpStatus gkp_optimize_n(const struct GkpConfig *config,
                              uint64_t n_min,
                              uint64_t n_max,
                              uint64_t *n_opt,
                              struct GkpRateResult *out);

// Segment length below which CC amplification beats per-step
// preamplification. Returns [`GkpStatus::NoCrossing`] when there is none.
//
// # Safety
// `out_km` is valid for writes.
enum GkpStatus gkp_cc_threshold_km(double p_link, double t_coh, double *out_km);

// Largest operation-noise variance keeping the QBER at the working threshold.
//
// # Safety
// `out` is valid for writes.
enum GkpStatus gkp_gamma_threshold(uint64_t n, double delta_sq, double *out);

// # Safety
// `out` is valid for writes.
enum GkpStatus gkp_pauli_error_prob(double sigma_tot_sq, enum GkpPauliModel model, double *out);

// # Safety
// `out` is valid for writes.
enum GkpStatus gkp_qber(uint64_t n, double p_pauli, double *out);

// # Safety
// `out` is valid for writes.
enum GkpStatus gkp_plob_bound(double length_km, double *out);

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *gkp_last_error(void);

// Library version as a static NUL-terminated string.
const char *gkp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GKP_REPEATER_H */
