#ifndef MANIFOLD_DDM_H
#define MANIFOLD_DDM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum DdmStatus {
  DDM_STATUS_OK = 0,
  DDM_STATUS_NULL_POINTER = 1,
  DDM_STATUS_INVALID_ARGUMENT = 2,
  DDM_STATUS_INVALID_CONFIG = 3,
  DDM_STATUS_NUMERIC_DOMAIN = 4,
  DDM_STATUS_NOT_CONVERGED = 5,
  DDM_STATUS_ANALYSIS_UNAVAILABLE = 6,
  DDM_STATUS_NOT_SOLVED = 7,
  DDM_STATUS_IO = 8,
  DDM_STATUS_PANIC = 9,
} DdmStatus;

/**
 * Built-in atlas with its problem data.
 */
typedef struct DdmAtlas DdmAtlas;

/**
 * Assembled subproblems plus the latest converged state.
 */
typedef struct DdmSolver DdmSolver;

/**
 * Solver parameters; fill with `ddm_solver_options_default` first.
 */
typedef struct DdmSolverOptions {
  size_t n2;
  double n1_ratio;
  double cg_tolerance;
  size_t max_outer;
  /**
   * 0 selects the available parallelism capped at the chart count.
   */
  size_t workers;
  size_t quad_points;
  /**
   * Nonzero samples coefficients once per cell instead of per point.
   */
  int32_t cell_center_coefficients;
  int32_t jacobi;
} DdmSolverOptions;

/**
 * Error norms, each the maximum over charts.
 */
typedef struct DdmErrorReport {
  double h;
  double linf;
  double l2;
  double h1_semi;
  double energy;
  size_t n0;
} DdmErrorReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *ddm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ddm_version(void);

/**
 * Creates a built-in atlas (`b4`, `b2xs2`, `cp2`, `flat_square`,
 * `flat_interval`, `flat_single`). Pass `NAN` for defaults.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DdmStatus ddm_atlas_new_builtin(const char *name,
                                     double s,
                                     double delta,
                                     double r,
                                     double overlap,
                                     double b,
                                     struct DdmAtlas **out);

/**
 * # Safety
 * `atlas` must be valid; `out` must be writable.
 */
enum DdmStatus ddm_atlas_chart_count(const struct DdmAtlas *atlas, size_t *out);

/**
 * # Safety
 * `atlas` must come from `ddm_atlas_new_builtin` or be null.
 */
void ddm_atlas_free(struct DdmAtlas *atlas);

/**
 * Defaults: `n2 = 10`, `n1_ratio = 0.4`, tolerance `1e-8`, 500 outer
 * steps, automatic workers, 2 points per axis, cell-center coefficients.
 *
 * # Safety
 * `out` must be writable.
 */
enum DdmStatus ddm_solver_options_default(struct DdmSolverOptions *out);

/**
 * Builds grids and subproblems. `options` may be null for defaults. The
 * solver keeps its own reference to the atlas.
 *
 * # Safety
 * `atlas` must be valid, `options` valid or null, `out` writable.
 */
enum DdmStatus ddm_solver_new(const struct DdmAtlas *atlas,
                              const struct DdmSolverOptions *options,
                              struct DdmSolver **out);

/**
 * Runs the outer iteration to its limit and stores the result.
 *
 * # Safety
 * `solver` must be valid; `n0` writable or null.
 */
enum DdmStatus ddm_solver_run(struct DdmSolver *solver, size_t *n0);

/**
 * Error norms of the stored limit against the exact solution. Nonzero
 * `metric_norms` weighs L2 and H1 with the chart metric; zero uses plain
 * coordinate integrals.
 *
 * # Safety
 * `solver` must be valid; `out` writable.
 */
enum DdmStatus ddm_solver_error_norms(const struct DdmSolver *solver,
                                      int32_t metric_norms,
                                      struct DdmErrorReport *out);

/**
 * # Safety
 * `solver` must be valid; `out` writable.
 */
enum DdmStatus ddm_solver_chart_count(const struct DdmSolver *solver, size_t *out);

/**
 * Number of grid nodes of chart `chart`.
 *
 * # Safety
 * `solver` must be valid; `out` writable.
 */
enum DdmStatus ddm_solver_chart_dofs(const struct DdmSolver *solver, size_t chart, size_t *out);

/**
 * Largest cell edge over all charts.
 *
 * # Safety
 * `solver` must be valid; `out` writable.
 */
enum DdmStatus ddm_solver_grid_scale(const struct DdmSolver *solver, double *out);

/**
 * Copies the nodal values of chart `chart` (axis 0 fastest) into
 * `values`, which must hold `len >= ddm_solver_chart_dofs` entries.
 *
 * # Safety
 * `solver` must be valid; `values` must point to `len` writable doubles.
 */
enum DdmStatus ddm_solver_copy_solution(const struct DdmSolver *solver,
                                        size_t chart,
                                        double *values,
                                        size_t len);

/**
 * # Safety
 * `solver` must come from `ddm_solver_new` or be null.
 */
void ddm_solver_free(struct DdmSolver *solver);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MANIFOLD_DDM_H */
