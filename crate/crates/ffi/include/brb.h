#ifndef BRB_H
#define BRB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BrbStatus {
  BRB_STATUS_OK = 0,
  BRB_STATUS_INVALID_ARGUMENT = 1,
  BRB_STATUS_CONFIG = 2,
  BRB_STATUS_BUDGET_EXCEEDED = 3,
  BRB_STATUS_FIT_FAILURE = 4,
  BRB_STATUS_IO = 5,
  BRB_STATUS_NULL_POINTER = 6,
  BRB_STATUS_PANIC = 7,
} BrbStatus;

typedef enum BrbNoiseKind {
  BRB_NOISE_KIND_HEATING = 0,
  BRB_NOISE_KIND_DEPHASING = 1,
  BRB_NOISE_KIND_AMPLITUDE = 2,
  BRB_NOISE_KIND_PHASE_JITTER = 3,
} BrbNoiseKind;

typedef enum BrbCorrelation {
  BRB_CORRELATION_MARKOVIAN = 0,
  /**
   * Constant over `correlation_steps` steps.
   */
  BRB_CORRELATION_STEPS = 1,
  BRB_CORRELATION_DC = 2,
} BrbCorrelation;

typedef enum BrbModel {
  BRB_MODEL_EXACT = 0,
  BRB_MODEL_FIRST_ORDER = 1,
} BrbModel;

typedef enum BrbEstimator {
  BRB_ESTIMATOR_FIDELITY = 0,
  BRB_ESTIMATOR_READOUT = 1,
} BrbEstimator;

typedef enum BrbFamily {
  BRB_FAMILY_NONE = 0,
  BRB_FAMILY_HEATING = 1,
  BRB_FAMILY_DEPHASING = 2,
} BrbFamily;

typedef enum BrbCorrelationClass {
  BRB_CORRELATION_CLASS_UNCLASSIFIED = 0,
  BRB_CORRELATION_CLASS_MARKOVIAN = 1,
  BRB_CORRELATION_CLASS_DC = 2,
  BRB_CORRELATION_CLASS_INDETERMINATE = 3,
} BrbCorrelationClass;

typedef struct BrbDataset BrbDataset;

typedef struct BrbFitReport BrbFitReport;

typedef struct BrbNoise BrbNoise;

typedef struct BrbPlan BrbPlan;

/**
 * One dataset row. `shots` is -1 for the exact fidelity estimator, 0 for
 * readout without shot noise, else the shot count.
 */
typedef struct BrbRecord {
  double length;
  size_t circuit_index;
  double fidelity_mean;
  double fidelity_stderr;
  size_t noise_averages;
  int64_t shots;
} BrbRecord;

/**
 * Model selection settings. `window <= 0` fits every length,
 * `spam_scale <= 0` disables the explicit scale and `rabi_rate <= 0`
 * skips the physical parameters.
 */
typedef struct BrbSelectOptions {
  double window;
  bool weighted;
  double spam_scale;
  double rabi_rate;
  double step_magnitude;
} BrbSelectOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *brb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *brb_version(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void brb_string_free(char *s);

/**
 * Mean noise-averaged fidelity of the analytical model at length `l`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BrbStatus brb_mean_model(enum BrbNoiseKind kind, double eta, double l, double *out);

/**
 * Dephasing variance `C·E(1-E)²/(2-E)`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BrbStatus brb_variance_model_dephasing(double e, double c, double *out);

/**
 * Decay rate η of a noise process under a drive.
 *
 * # Safety
 * `noise` must be a live handle and `out` valid for writes.
 */
enum BrbStatus brb_eta(const struct BrbNoise *noise,
                       double rabi_rate,
                       double step_magnitude,
                       double *out);

/**
 * Red-sideband fidelity estimate of the coherent state `re + i·im`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BrbStatus brb_ideal_probability(double re, double im, size_t fock_cutoff, double *out);

/**
 * Creates an experiment plan over step counts `steps[0..n_steps]`.
 *
 * # Safety
 * `steps` must point to `n_steps` readable values and `out` be valid for
 * writes.
 */
enum BrbStatus brb_plan_new(double rabi_rate,
                            double step_magnitude,
                            const size_t *steps,
                            size_t n_steps,
                            size_t randomizations,
                            size_t noise_averages,
                            uint64_t seed,
                            struct BrbPlan **out);

/**
 * Sets the readout shot count; 0 means no shot noise.
 *
 * # Safety
 * `plan` must be a live handle.
 */
enum BrbStatus brb_plan_set_shots(struct BrbPlan *plan, uint32_t shots);

/**
 * Number of single-step evaluations a run of `plan` performs.
 *
 * # Safety
 * `plan` must be a live handle and `out` valid for writes.
 */
enum BrbStatus brb_plan_cost(const struct BrbPlan *plan, uint64_t *out);

/**
 * # Safety
 * `plan` must come from [`brb_plan_new`] and not have been freed. Null is
 * ignored.
 */
void brb_plan_free(struct BrbPlan *plan);

/**
 * Creates a noise process. Heating takes the per-step kick size as
 * `sigma`; `correlation_steps` is read only for [`BrbCorrelation::Steps`].
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BrbStatus brb_noise_new(enum BrbNoiseKind kind,
                             double sigma,
                             enum BrbCorrelation correlation,
                             size_t correlation_steps,
                             struct BrbNoise **out);

/**
 * # Safety
 * `noise` must come from [`brb_noise_new`] and not have been freed. Null is
 * ignored.
 */
void brb_noise_free(struct BrbNoise *noise);

/**
 * Runs the benchmark. A `budget` of 0 uses the default budget.
 *
 * # Safety
 * `plan` and `noise` must be live handles and `out` valid for writes.
 */
enum BrbStatus brb_run(const struct BrbPlan *plan,
                       const struct BrbNoise *noise,
                       enum BrbModel model,
                       enum BrbEstimator estimator,
                       uint64_t budget,
                       struct BrbDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `out` valid for writes.
 */
enum BrbStatus brb_dataset_len(const struct BrbDataset *ds, size_t *out);

/**
 * Copies row `index` into `out`.
 *
 * # Safety
 * `ds` must be a live handle and `out` valid for writes.
 */
enum BrbStatus brb_dataset_row(const struct BrbDataset *ds, size_t index, struct BrbRecord *out);

/**
 * Reads a dataset CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum BrbStatus brb_dataset_read_csv(const char *path, struct BrbDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum BrbStatus brb_dataset_write_csv(const struct BrbDataset *ds, const char *path);

/**
 * # Safety
 * `ds` must come from this library and not have been freed. Null is
 * ignored.
 */
void brb_dataset_free(struct BrbDataset *ds);

/**
 * Fills `out` with the default selection settings.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum BrbStatus brb_select_options_default(struct BrbSelectOptions *out);

/**
 * Fits both decay families and selects one. `options` may be null for
 * the defaults.
 *
 * # Safety
 * `ds` must be a live handle, `options` null or readable and `out` valid
 * for writes.
 */
enum BrbStatus brb_select_model(const struct BrbDataset *ds,
                                const struct BrbSelectOptions *options,
                                struct BrbFitReport **out);

/**
 * Selected family; [`BrbFamily::None`] for data without decay.
 *
 * # Safety
 * `report` must be a live handle and `out` valid for writes.
 */
enum BrbStatus brb_report_selected(const struct BrbFitReport *report, enum BrbFamily *out);

/**
 * η̂, its standard error and the AIC of one candidate fit. Any output
 * pointer may be null.
 *
 * # Safety
 * `report` must be a live handle; non-null outputs must be valid for writes.
 */
enum BrbStatus brb_report_fit(const struct BrbFitReport *report,
                              enum BrbFamily which,
                              double *eta,
                              double *eta_stderr,
                              double *aic);

/**
 * Correlation class and Ĉ (NaN when not estimated).
 *
 * # Safety
 * `report` must be a live handle and both outputs valid for writes.
 */
enum BrbStatus brb_report_correlation(const struct BrbFitReport *report,
                                      enum BrbCorrelationClass *class_,
                                      double *c_hat);

/**
 * Full report as JSON; release with [`brb_string_free`].
 *
 * # Safety
 * `report` must be a live handle and `out` valid for writes.
 */
enum BrbStatus brb_report_to_json(const struct BrbFitReport *report, char **out);

/**
 * # Safety
 * `report` must come from [`brb_select_model`] and not have been freed.
 * Null is ignored.
 */
void brb_report_free(struct BrbFitReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRB_H */
