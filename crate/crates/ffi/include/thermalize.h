#ifndef THERMALIZE_H
#define THERMALIZE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum ThzStatus {
  THZ_STATUS_OK = 0,
  THZ_STATUS_NULL_POINTER = 1,
  THZ_STATUS_INVALID_ARGUMENT = 2,
  THZ_STATUS_CONFIG = 3,
  THZ_STATUS_NUMERICAL = 4,
  THZ_STATUS_IO = 5,
  THZ_STATUS_NOT_DIAGONALIZED = 6,
  THZ_STATUS_BUFFER_TOO_SMALL = 7,
  THZ_STATUS_PANIC = 8,
} ThzStatus;

/**
 * One disorder sample of a chain: its Hamiltonian and, once
 * `thz_chain_diagonalize` has run, its spectrum.
 */
typedef struct ThzChain ThzChain;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a chain with uniform couplings and fields (MHz), drive phase
 * π/2, and the disorder draw `sample` of `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum ThzStatus thz_chain_new(size_t n_sites,
                             double coupling_mhz,
                             double field_mhz,
                             double disorder_mhz,
                             uint64_t seed,
                             uint64_t sample,
                             struct ThzChain **out);

/**
 * Creates a chain from a JSON chain configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ThzStatus thz_chain_from_json(const char *json, uint64_t sample, struct ThzChain **out);

/**
 * Releases a chain. Null is ignored.
 *
 * # Safety
 * `chain` must come from this library and not be used afterwards.
 */
void thz_chain_free(struct ThzChain *chain);

/**
 * Hilbert-space dimension 2^N.
 *
 * # Safety
 * `chain` must be a live handle and `out` a valid pointer.
 */
enum ThzStatus thz_chain_dim(const struct ThzChain *chain, size_t *out);

/**
 * Full eigendecomposition; required by the spectral queries below.
 *
 * # Safety
 * `chain` must be a live handle.
 */
enum ThzStatus thz_chain_diagonalize(struct ThzChain *chain);

/**
 * Copies the ascending eigenvalues (rad/ns) into `out[0..len]`; `len` must
 * be at least the dimension.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum ThzStatus thz_chain_eigenvalues(const struct ThzChain *chain, double *out, size_t len);

/**
 * Dimensionless Jβ of the canonical ensemble matching the energy of the
 * spin-coherent state (θ₀, φ₀).
 *
 * # Safety
 * `chain` must be a live handle and `j_beta` a valid pointer.
 */
enum ThzStatus thz_effective_beta(const struct ThzChain *chain,
                                  double theta0,
                                  double phi0,
                                  double *j_beta);

/**
 * Normalized energy ε ∈ [0, 1] of the spin-coherent state (θ₀, φ₀).
 *
 * # Safety
 * `chain` must be a live handle and `epsilon` a valid pointer.
 */
enum ThzStatus thz_normalized_energy(const struct ThzChain *chain,
                                     double theta0,
                                     double phi0,
                                     double *epsilon);

/**
 * Quench from (θ₀, φ₀): writes the site-averaged ⟨σᶻ⟩ and single-site
 * entropy at each of the `n_times` times (ns). Either output may be null.
 *
 * # Safety
 * `times` must hold `n_times` doubles; non-null outputs must have room
 * for `n_times` doubles.
 */
enum ThzStatus thz_quench(const struct ThzChain *chain,
                          double theta0,
                          double phi0,
                          const double *times,
                          size_t n_times,
                          double *sigma_z,
                          double *entropy);

/**
 * Site-averaged nearest-neighbour concurrence of the canonical state at
 * each dimensionless Jβ.
 *
 * # Safety
 * `j_betas` must hold `n` doubles and `out` have room for `n` doubles.
 */
enum ThzStatus thz_thermal_concurrence(const struct ThzChain *chain,
                                       const double *j_betas,
                                       size_t n,
                                       double *out);

/**
 * Energy expectation (rad/ns) of the spin-coherent state (θ₀, φ₀); does
 * not need the spectrum.
 *
 * # Safety
 * `chain` must be a live handle and `energy` a valid pointer.
 */
enum ThzStatus thz_energy(const struct ThzChain *chain, double theta0, double phi0, double *energy);

/**
 * Page value of a single site in an `n_sites` random pure state.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ThzStatus thz_page_value(size_t n_sites, double *out);

/**
 * GOE surmise density of the gap ratio r.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ThzStatus thz_goe_pdf(double r, double *out);

/**
 * Runs an experiment described by a JSON config and writes its CSV tables
 * and JSON sidecar into `out_dir` (null: the config's `output_dir`, else
 * `results`).
 *
 * # Safety
 * `config_json` must be NUL-terminated; `out_dir` null or NUL-terminated.
 */
enum ThzStatus thz_run_config_json(const char *config_json, const char *out_dir);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *thz_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *thz_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMALIZE_H */
