#ifndef RATELIM_H
#define RATELIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum RlStatus {
  RL_STATUS_OK = 0,
  RL_STATUS_INVALID_PLANT = 1,
  RL_STATUS_PARAM_OUT_OF_BOX = 2,
  RL_STATUS_INVALID_ARGUMENT = 3,
  RL_STATUS_SATURATION = 4,
  RL_STATUS_SYMBOL_OUT_OF_RANGE = 5,
  RL_STATUS_DIMENSION_CAP = 6,
  RL_STATUS_ITERATION_CAP = 7,
  RL_STATUS_NULL_POINTER = 8,
  RL_STATUS_PANIC = 9,
} RlStatus;

typedef enum RlControlLaw {
  RL_CONTROL_LAW_NOMINAL = 0,
  RL_CONTROL_LAW_CENTERING = 1,
} RlControlLaw;

typedef enum RlVerdict {
  RL_VERDICT_STABLE = 0,
  RL_VERDICT_UNSTABLE = 1,
  RL_VERDICT_INCONCLUSIVE = 2,
} RlVerdict;

// Opaque uncertain plant.
typedef struct RlPlant RlPlant;

// Opaque Monte Carlo result.
typedef struct RlReport RlReport;

typedef struct RlBounds {
  double r_nec0;
  double r_nec1;
  double r_nec;
  double p_nec;
  double r_you;
  double p_you;
  // `NaN` for plants of order above one.
  double r_phat;
  // `NaN` for plants of order above one.
  double r_martins;
  bool feasible;
} RlBounds;

typedef struct RlSufficiency {
  double rho;
  bool sufficient;
} RlSufficiency;

typedef struct RlTimeShareRow {
  uint32_t m;
  double delta_plus;
  double delta_minus;
  // `NaN` when no total level up to the cap is feasible.
  double kappa_bar;
  // `NaN` when not computed for this `(p, m)`.
  double r_bar;
  bool feasible;
  // 0 when no total level up to the cap is feasible.
  uint64_t min_total_level;
  double avg_level;
} RlTimeShareRow;

typedef struct RlExperiment {
  uintptr_t trials;
  uintptr_t steps;
  uint64_t seed;
  enum RlControlLaw law;
  // `NaN` draws the initial output uniformly per trial.
  double y0;
  // Slope tolerance of the verdict; `NaN` selects the default.
  double tol_slope;
} RlExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *rl_last_error(void);

// Library version as a static NUL-terminated string.
const char *rl_version(void);

// Builds a plant of order `n` from nominal coefficients and half-widths.
//
// # Safety
// `a_star` and `eps` must point to `n` readable doubles and `out` must be
// writable. The handle written to `out` must be released with
// [`rl_plant_free`].
enum RlStatus rl_plant_new(const double *a_star,
                           const double *eps,
                           uintptr_t n,
                           double y0_bound,
                           struct RlPlant **out_plant);

// # Safety
// `plant` must be null or a handle from [`rl_plant_new`] not yet freed.
void rl_plant_free(struct RlPlant *plant);

// Order of the plant, 0 for a null handle.
//
// # Safety
// `plant` must be null or a live handle.
uintptr_t rl_plant_order(const struct RlPlant *plant);

// Necessary rate and loss bounds at loss probability `p`.
//
// # Safety
// `plant` must be a live handle and `out_bounds` writable.
enum RlStatus rl_bounds(const struct RlPlant *plant, double p, struct RlBounds *out_bounds);

// Spectral radius of the second-moment operator for `levels >= 2`.
//
// # Safety
// `plant` must be a live handle and `out_suff` writable.
enum RlStatus rl_sufficient(const struct RlPlant *plant,
                            uint64_t levels,
                            double p,
                            struct RlSufficiency *out_suff);

// Smallest level count in `2..=n_max` with spectral radius below one.
// Writes 0 to `out_levels` when there is none; `out_rho` may be null.
//
// # Safety
// `plant` must be a live handle, `out_levels` writable, `out_rho` null or
// writable.
enum RlStatus rl_min_sufficient_n(const struct RlPlant *plant,
                                  double p,
                                  uint64_t n_max,
                                  uint64_t *out_levels,
                                  double *out_rho);

// Smallest `log2 N` over real `N` with spectral radius below one, or
// `INFINITY`.
//
// # Safety
// `plant` must be a live handle and `out_rate` writable.
enum RlStatus rl_min_sufficient_rate(const struct RlPlant *plant, double p, double *out_rate);

// Time-sharing summary for a scalar plant and cycle length `m`, scanning
// total levels up to `cap`.
//
// # Safety
// `out_row` must be writable.
enum RlStatus rl_timeshare_row(double a_star,
                               double eps,
                               double p,
                               uint32_t m,
                               uint64_t cap,
                               struct RlTimeShareRow *out_row);

// Default experiment settings: 1000 trials of 500 steps, seed 0.
struct RlExperiment rl_experiment_default(void);

// Monte Carlo run of the closed loop with an `levels`-level quantizer.
//
// `strategy` is one of `nominal`, `iid`, `greedy` or `vertex:` followed by
// one `+`/`-` per coefficient.
//
// # Safety
// `plant` must be a live handle, `exp` readable, `strategy` a NUL-terminated
// string and `out_report` writable. The report must be released with
// [`rl_report_free`].
enum RlStatus rl_simulate(const struct RlPlant *plant,
                          uint64_t levels,
                          double p,
                          const struct RlExperiment *exp,
                          const char *strategy,
                          struct RlReport **out_report);

// Monte Carlo run of the time-shared scalar loop with `total_level` symbols
// per cycle of length `m`.
//
// # Safety
// As for [`rl_simulate`].
enum RlStatus rl_simulate_timeshare(double a_star,
                                    double eps,
                                    uint32_t m,
                                    uint64_t total_level,
                                    double p,
                                    double y0_bound,
                                    const struct RlExperiment *exp,
                                    const char *strategy,
                                    struct RlReport **out_report);

// # Safety
// `report` must be null or a handle from a simulate call not yet freed.
void rl_report_free(struct RlReport *report);

// Number of recorded steps, 0 for a null handle.
//
// # Safety
// `report` must be null or a live handle.
uintptr_t rl_report_len(const struct RlReport *report);

// # Safety
// `report` must be a live handle.
enum RlVerdict rl_report_verdict(const struct RlReport *report);

// Fitted slope of `ln E[sigma^2]` per step; `NaN` for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double rl_report_slope(const struct RlReport *report);

// Copies up to `len` values of the mean square output and range width into
// `mean_sq_y` and `mean_sq_sigma` (either may be null). Returns the count
// copied.
//
// # Safety
// `report` must be a live handle; non-null buffers must hold `len` doubles.
uintptr_t rl_report_copy(const struct RlReport *report,
                         double *mean_sq_y,
                         double *mean_sq_sigma,
                         uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RATELIM_H */
