#ifndef ISOFLOW_H
#define ISOFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum IsoflowStatus {
  ISOFLOW_STATUS_OK = 0,
  ISOFLOW_STATUS_NULL_POINTER = 1,
  ISOFLOW_STATUS_INVALID_ARGUMENT = 2,
  ISOFLOW_STATUS_INVALID_CONFIG = 3,
  /**
   * Degenerate geometry: coincident or antipodal points, cut locus.
   */
  ISOFLOW_STATUS_DEGENERATE = 4,
  /**
   * A step left the integrator's trust region.
   */
  ISOFLOW_STATUS_STEP_TOO_LARGE = 5,
  ISOFLOW_STATUS_IO = 6,
  /**
   * A check of a harness suite failed; the artifacts were still written.
   */
  ISOFLOW_STATUS_CHECKS_FAILED = 7,
  ISOFLOW_STATUS_PANIC = 8,
} IsoflowStatus;

/**
 * Divergence-free eigenfields up to a degree cutoff.
 */
typedef struct IsoflowBasis IsoflowBasis;

/**
 * A particle ensemble moved by one noise realization.
 */
typedef struct IsoflowFlow IsoflowFlow;

/**
 * Kernel functions of one isotropic spectrum.
 */
typedef struct IsoflowKernel IsoflowKernel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *isoflow_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *isoflow_version(void);

/**
 * Power law `b_ℓ = b / (ℓ-1)^{1+alpha}` for `ℓ >= 2`, `b_1 = 0`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum IsoflowStatus isoflow_kernel_new_power(uintptr_t d,
                                            uintptr_t l_max,
                                            double alpha,
                                            double b,
                                            double nu,
                                            struct IsoflowKernel **out);

/**
 * Explicit coefficients `b_1..b_{n}`.
 *
 * # Safety
 * `coeffs` must point to `n` doubles; `out` must be valid for a pointer write.
 */
enum IsoflowStatus isoflow_kernel_new_explicit(uintptr_t d,
                                               const double *coeffs,
                                               uintptr_t n,
                                               double nu,
                                               struct IsoflowKernel **out);

/**
 * # Safety
 * `kernel` must come from `isoflow_kernel_new_*` and not be freed twice.
 */
void isoflow_kernel_free(struct IsoflowKernel *kernel);

/**
 * `c = Σ b_ℓ / 2`.
 *
 * # Safety
 * `kernel` must be a live handle; `out` valid for a write.
 */
enum IsoflowStatus isoflow_kernel_c(const struct IsoflowKernel *kernel, double *out);

/**
 * `G`, `G'`, `G1`, `G2` at angle `theta`. Any output pointer may be null.
 *
 * # Safety
 * `kernel` must be a live handle; non-null outputs valid for a write.
 */
enum IsoflowStatus isoflow_kernel_eval(const struct IsoflowKernel *kernel,
                                       double theta,
                                       double *g,
                                       double *g_prime,
                                       double *g1,
                                       double *g2);

/**
 * Longitudinal and transverse covariance functions at `theta`.
 *
 * # Safety
 * `kernel` must be a live handle; outputs valid for a write.
 */
enum IsoflowStatus isoflow_kernel_phi_psi(const struct IsoflowKernel *kernel,
                                          double theta,
                                          double *phi,
                                          double *psi);

/**
 * Quadratic-variation rate of the rotation process at separation `rho`.
 *
 * # Safety
 * `kernel` must be a live handle; `out` valid for a write.
 */
enum IsoflowStatus isoflow_kernel_rotation_rate(const struct IsoflowKernel *kernel,
                                                double rho,
                                                double *out);

/**
 * Closed-form Jacobi-field energy at separation `rho`; tends to `-nu` as
 * `rho -> 0` for smooth spectra.
 *
 * # Safety
 * `kernel` must be a live handle; `out` valid for a write.
 */
enum IsoflowStatus isoflow_kernel_jacobi_energy(const struct IsoflowKernel *kernel,
                                                double rho,
                                                double *out);

/**
 * Eigenfields of degrees `1..=l_max` on `S^2`.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum IsoflowStatus isoflow_basis_new(uintptr_t l_max, struct IsoflowBasis **out);

/**
 * # Safety
 * `basis` must come from `isoflow_basis_new` and not be freed twice.
 */
void isoflow_basis_free(struct IsoflowBasis *basis);

/**
 * Number of eigenfields, `Σ_{ℓ <= l_max} (2ℓ+1)`; zero for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle.
 */
uintptr_t isoflow_basis_mode_count(const struct IsoflowBasis *basis);

/**
 * Eigenfield `A_{ell,k}` (`1 <= k <= 2 ell + 1`) at the unit vector `x`,
 * written to `out[0..3]`.
 *
 * # Safety
 * `basis` must be a live handle; `x` readable and `out` writable for 3 doubles.
 */
enum IsoflowStatus isoflow_basis_eval(const struct IsoflowBasis *basis,
                                      uintptr_t ell,
                                      uintptr_t k,
                                      const double *x,
                                      double *out);

/**
 * Flow of `n_points` particles (`points` holds `3 n_points` coordinates, each
 * triple normalized on entry) driven by the kernel's spectrum truncated at
 * `truncation`, zero drift, step `dt`, and noise keyed by `seed`.
 *
 * # Safety
 * `kernel` must be a live handle, `points` readable for `3 n_points` doubles,
 * `out` valid for a pointer write.
 */
enum IsoflowStatus isoflow_flow_new(const struct IsoflowKernel *kernel,
                                    uintptr_t truncation,
                                    double dt,
                                    uint64_t seed,
                                    const double *points,
                                    uintptr_t n_points,
                                    struct IsoflowFlow **out);

/**
 * # Safety
 * `flow` must come from `isoflow_flow_new` and not be freed twice.
 */
void isoflow_flow_free(struct IsoflowFlow *flow);

/**
 * Advances every particle by `n_steps` steps. On error the particles stay
 * at the last completed step.
 *
 * # Safety
 * `flow` must be a live handle.
 */
enum IsoflowStatus isoflow_flow_step(struct IsoflowFlow *flow, uintptr_t n_steps);

/**
 * Current time; NaN for a null handle.
 *
 * # Safety
 * `flow` must be null or a live handle.
 */
double isoflow_flow_time(const struct IsoflowFlow *flow);

/**
 * Number of particles; zero for a null handle.
 *
 * # Safety
 * `flow` must be null or a live handle.
 */
uintptr_t isoflow_flow_len(const struct IsoflowFlow *flow);

/**
 * Copies the current positions into `out`, which holds `len` doubles; `len`
 * must be at least `3 * isoflow_flow_len(flow)`.
 *
 * # Safety
 * `flow` must be a live handle and `out` writable for `len` doubles.
 */
enum IsoflowStatus isoflow_flow_positions(const struct IsoflowFlow *flow,
                                          double *out,
                                          uintptr_t len);

/**
 * Runs one harness suite (`"kernels"`, `"identities"`, `"simulate"`,
 * `"inverse"`, `"distance"`, `"rotation"`) with a TOML configuration, writing
 * artifacts and a manifest under the configured output directory. Returns
 * `ChecksFailed` when a check fails.
 *
 * # Safety
 * `config_toml` and `suite` must be NUL-terminated strings.
 */
enum IsoflowStatus isoflow_run_suite(const char *config_toml, const char *suite);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISOFLOW_H */
