#ifndef SHF_H
#define SHF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ShfStatus {
  SHF_STATUS_OK = 0,
  SHF_STATUS_NULL_POINTER = 1,
  SHF_STATUS_INVALID_INPUT = 2,
  /**
   * File missing, unreadable or malformed.
   */
  SHF_STATUS_IO = 3,
  SHF_STATUS_UNKNOWN_ION = 4,
  /**
   * Field along a direction where the electron has no quantization axis.
   */
  SHF_STATUS_DEGENERATE = 5,
  /**
   * Ion closer than the minimum distance.
   */
  SHF_STATUS_GEOMETRY = 6,
  SHF_STATUS_NON_CONVERGENCE = 7,
  SHF_STATUS_UNIDENTIFIABLE = 8,
  /**
   * Any other computation failure.
   */
  SHF_STATUS_COMPUTATION = 9,
  SHF_STATUS_PANIC = 10,
} ShfStatus;

/**
 * Erbium ion: ground and excited g-tensors plus its orientation.
 */
typedef struct ShfCenter ShfCenter;

/**
 * Ligand positions (Å) and gyromagnetic ratios (MHz/T).
 */
typedef struct ShfLattice ShfLattice;

typedef struct ShfVec3 {
  double x;
  double y;
  double z;
} ShfVec3;

/**
 * Closed-form observables. Fields in T, splittings in kHz, alpha in radians.
 */
typedef struct ShfSolveResult {
  struct ShfVec3 b_g;
  struct ShfVec3 b_e;
  double alpha;
  double delta_g;
  double delta_e;
  double ratio;
  double rho;
} ShfSolveResult;

/**
 * Exact 4-level results; splittings in kHz.
 */
typedef struct ShfOracleResult {
  double delta_g;
  double delta_e;
  double ratio;
  double rho;
} ShfOracleResult;

/**
 * Single-spin echo model: I0, T2 (µs), x, Δg and Δe (kHz), ρ.
 */
typedef struct ShfEchoParams {
  double i0;
  double t2;
  double x;
  double delta_g;
  double delta_e;
  double rho;
} ShfEchoParams;

typedef struct ShfFitResult {
  /**
   * `x` echoes the fixed exponent.
   */
  struct ShfEchoParams estimates;
  /**
   * One-sigma; `x` is 0.
   */
  struct ShfEchoParams sigmas;
  double residual_norm;
  size_t iterations;
  bool converged;
  bool usable;
} ShfFitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t shf_last_error_message(char *buf, size_t len);

/**
 * Static, NUL-terminated version string.
 */
const char *shf_version(void);

/**
 * Bundled tensors. `site` is 1 or 2, `orientation` 0 (A) or 1 (B).
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum ShfStatus shf_center_bundled(uint8_t site, uint8_t orientation_code, struct ShfCenter **out);

/**
 * Center from two row-major 3×3 tensors (dimensionless).
 *
 * # Safety
 * `ground` and `excited` must point to 9 doubles; `out` must be valid for a write.
 */
enum ShfStatus shf_center_from_tensors(const double *ground,
                                       const double *excited,
                                       uint8_t orientation_code,
                                       struct ShfCenter **out);

/**
 * # Safety
 * `center` must come from a `shf_center_*` constructor and not be used afterwards.
 */
void shf_center_free(struct ShfCenter *center);

/**
 * # Safety
 * `out` must be valid for a write.
 */
enum ShfStatus shf_lattice_bundled(struct ShfLattice **out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be valid for a write.
 */
enum ShfStatus shf_lattice_load(const char *path, struct ShfLattice **out);

/**
 * # Safety
 * `lattice` must come from a `shf_lattice_*` constructor and not be used afterwards.
 */
void shf_lattice_free(struct ShfLattice *lattice);

/**
 * Number of sites; 0 for a null handle.
 *
 * # Safety
 * `lattice` must be null or a live handle.
 */
size_t shf_lattice_len(const struct ShfLattice *lattice);

/**
 * Position (Å) of a labelled site as seen from an ion of the given
 * orientation (B applies the C₂ image), and its γ (MHz/T).
 *
 * # Safety
 * `lattice` must be a live handle, `label` NUL-terminated, the outputs valid for writes.
 */
enum ShfStatus shf_lattice_site(const struct ShfLattice *lattice,
                                const char *label,
                                uint8_t orientation_code,
                                struct ShfVec3 *position,
                                double *gamma);

/**
 * Closed-form splittings and contrast, lower electron branch. Position in Å,
 * γ in MHz/T, field magnitude in mT along `direction` (any non-zero vector).
 *
 * # Safety
 * `center` must be a live handle and `out` valid for a write.
 */
enum ShfStatus shf_solve(const struct ShfCenter *center,
                         struct ShfVec3 position,
                         double gamma,
                         double field_mt,
                         struct ShfVec3 direction,
                         struct ShfSolveResult *out);

/**
 * Same inputs as [`shf_solve`], solved by exact diagonalization.
 *
 * # Safety
 * `center` must be a live handle and `out` valid for a write.
 */
enum ShfStatus shf_oracle(const struct ShfCenter *center,
                          struct ShfVec3 position,
                          double gamma,
                          double field_mt,
                          struct ShfVec3 direction,
                          struct ShfOracleResult *out);

/**
 * Electron Zeeman coefficient in GHz/T; `manifold` 0 = ground, 1 = excited.
 *
 * # Safety
 * `center` must be a live handle and `out` valid for a write.
 */
enum ShfStatus shf_zeeman(const struct ShfCenter *center,
                          uint8_t manifold,
                          struct ShfVec3 direction,
                          double *out);

/**
 * Maximum contrast over field strengths in [b_lo_mt, b_hi_mt] for an ion at
 * `r_angstrom` along `ion_direction`; also returns the optimal field (mT).
 *
 * # Safety
 * `center` must be a live handle and the outputs valid for writes.
 */
enum ShfStatus shf_rho_max(const struct ShfCenter *center,
                           struct ShfVec3 field_direction,
                           struct ShfVec3 ion_direction,
                           double r_angstrom,
                           double b_lo_mt,
                           double b_hi_mt,
                           double *rho_max,
                           double *b_opt_mt);

/**
 * Echo intensity at delay `t_us` (µs).
 *
 * # Safety
 * `params` must be readable and `out` valid for a write.
 */
enum ShfStatus shf_echo_intensity(const struct ShfEchoParams *params, double t_us, double *out);

/**
 * Fits the single-spin model to `n` samples with x fixed at `x_fixed`.
 *
 * # Safety
 * `t_us` and `intensity` must point to `n` doubles; `out` must be valid for a write.
 */
enum ShfStatus shf_fit_echo(const double *t_us,
                            const double *intensity,
                            size_t n,
                            double x_fixed,
                            struct ShfFitResult *out);

/**
 * Homogeneous linewidth (kHz) for T2 in µs.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum ShfStatus shf_linewidth(double t2_us, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHF_H */
