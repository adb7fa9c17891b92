#ifndef VOLTERRA_CONTROL_H
#define VOLTERRA_CONTROL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum VcStatus {
  VcStatusOk = 0,
  VcStatusNullPointer = 1,
  VcStatusUtf8 = 2,
  VcStatusInvalidArgument = 3,
  VcStatusNumeric = 4,
  VcStatusBufferMismatch = 5,
  VcStatusPanic = 6,
} VcStatus;

/**
 * Opaque time-grid handle.
 */
typedef struct VcGrid VcGrid;

/**
 * Opaque model handle (cash-flow model plus its Lévy specification).
 */
typedef struct VcModel VcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a static NUL-terminated string.
 */
const char *vc_version(void);

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vc_last_error_message(void);

/**
 * Create a uniform grid over `[0, horizon]` with `steps` intervals.
 *
 * # Safety
 * `out` must be a valid pointer to a `VcGrid*` slot.
 */
enum VcStatus vc_grid_new(double horizon, uintptr_t steps, struct VcGrid **out);

/**
 * Release a grid handle. Passing null is a no-op.
 *
 * # Safety
 * `grid` must be null or a pointer returned by [`vc_grid_new`] that has not
 * been freed.
 */
void vc_grid_free(struct VcGrid *grid);

/**
 * Number of nodes (`steps + 1`) of a grid.
 *
 * # Safety
 * `grid` must be a live grid handle.
 */
uintptr_t vc_grid_len(const struct VcGrid *grid);

/**
 * Build a model from its JSON description (the `model` object schema of the
 * CLI with `horizon` and `levy` inlined):
 *
 * ```json
 * {"x0": 2.0, "b0": {"id": "constant", "value": 0.5},
 *  "sigma0": {"id": "zero"}, "gamma0": {"id": "zero"},
 *  "theta": {"id": "constant", "value": 1.0},
 *  "horizon": 1.0, "levy": {"intensity": 0.0, "marks": []},
 *  "epsilon": 0.1}
 * ```
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid slot pointer.
 */
enum VcStatus vc_model_from_json(const char *json, struct VcModel **out);

/**
 * Release a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
void vc_model_free(struct VcModel *model);

/**
 * Closed-form optimal consumption rate (trivial-information mode) at the
 * grid nodes. `out` must hold `vc_grid_len(grid)` values.
 *
 * # Safety
 * `model` and `grid` must be live handles; `out` must point to `len`
 * writable doubles.
 */
enum VcStatus vc_optimal_control(const struct VcModel *model,
                                 const struct VcGrid *grid,
                                 double tol,
                                 double u_min,
                                 double u_max,
                                 double *out,
                                 uintptr_t len);

/**
 * Resolvent factor `kappa(t_i)` of the model kernel at the grid nodes.
 *
 * # Safety
 * Same contracts as [`vc_optimal_control`].
 */
enum VcStatus vc_resolvent_kappa(const struct VcModel *model,
                                 const struct VcGrid *grid,
                                 double tol,
                                 double *out,
                                 uintptr_t len);

/**
 * Monte Carlo estimate of the performance functional for a control given
 * by its node values (`controls` must hold `vc_grid_len(grid)` values in
 * `[u_min, u_max]`).
 *
 * # Safety
 * `model`/`grid` live handles; `controls` readable for `controls_len`
 * doubles; `j_out`/`se_out` valid slots.
 */
enum VcStatus vc_performance(const struct VcModel *model,
                             const struct VcGrid *grid,
                             const double *controls,
                             uintptr_t controls_len,
                             double u_min,
                             double u_max,
                             uint64_t n_paths,
                             uint64_t base_seed,
                             double *j_out,
                             double *se_out);

/**
 * Sample mean and standard error of the terminal change-of-measure weight
 * `M(T)` (a unit-mean sanity probe of the model's Girsanov kernel).
 *
 * # Safety
 * `model`/`grid` live handles; `mean_out`/`se_out` valid slots.
 */
enum VcStatus vc_weight_terminal_mean(const struct VcModel *model,
                                      const struct VcGrid *grid,
                                      uint64_t n_paths,
                                      uint64_t base_seed,
                                      double *mean_out,
                                      double *se_out);

/**
 * Run a full experiment config (same behavior as `volterra run`); returns
 * the process exit code (0 ok, 1 validation error, 2 numeric failure).
 *
 * # Safety
 * `config_path` and `out_dir` must be NUL-terminated strings (`out_dir` may
 * be null to use the config's own output directory).
 */
int32_t vc_run_config(const char *config_path, const char *out_dir, uintptr_t workers);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLTERRA_CONTROL_H */
