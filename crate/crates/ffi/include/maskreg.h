#ifndef MASKREG_H
#define MASKREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MaskregStatus {
  MASKREG_STATUS_OK = 0,
  MASKREG_STATUS_NULL_POINTER = 1,
  MASKREG_STATUS_INVALID_ARGUMENT = 2,
  MASKREG_STATUS_INVALID_CONFIG = 3,
  MASKREG_STATUS_PARSE = 4,
  MASKREG_STATUS_DIM_MISMATCH = 5,
  MASKREG_STATUS_NUMERICAL = 6,
  MASKREG_STATUS_PROTOCOL = 7,
  MASKREG_STATUS_TRANSPORT = 8,
  MASKREG_STATUS_IO = 9,
  MASKREG_STATUS_PANIC = 10,
} MaskregStatus;

typedef enum MaskregMode {
  MASKREG_MODE_LINEAR = 0,
  MASKREG_MODE_RIDGE = 1,
} MaskregMode;

typedef enum MaskregTamper {
  MASKREG_TAMPER_HONEST = 0,
  MASKREG_TAMPER_SKIP_PSEUDO_RESPONSE = 1,
  MASKREG_TAMPER_NON_COMMUTATIVE_KEY = 2,
  // Cloud adds Gaussian noise of the given magnitude.
  MASKREG_TAMPER_PERTURB_RESULT = 3,
  MASKREG_TAMPER_WRONG_DECRYPT = 4,
} MaskregTamper;

typedef enum MaskregTransport {
  MASKREG_TRANSPORT_BUS = 0,
  MASKREG_TRANSPORT_TCP = 1,
} MaskregTransport;

typedef enum MaskregRankClass {
  MASKREG_RANK_CLASS_NO_SOLUTION = 0,
  MASKREG_RANK_CLASS_INFINITE = 1,
  MASKREG_RANK_CLASS_UNIQUE = 2,
} MaskregRankClass;

// Opaque handle to a configured federation.
typedef struct MaskregSession MaskregSession;

// Outcome of one protocol run.
typedef struct MaskregRunResult {
  // True when the verification column passed.
  bool accepted;
  double max_deviation;
  double total_ms;
} MaskregRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error on this thread, or null. Valid until the next call into the
// library on the same thread.
const char *maskreg_last_error(void);

// Static version string.
const char *maskreg_version(void);

// Creates a session over row-major `x` (`n × p`) and `y` (`n`), split
// equally across `k` agencies.
//
// # Safety
// `x` must point to `n * p` doubles, `y` to `n` doubles, and `out` to
// writable storage for one pointer.
enum MaskregStatus maskreg_session_new(const double *x,
                                       size_t n,
                                       size_t p,
                                       const double *y,
                                       size_t k,
                                       enum MaskregMode mode,
                                       double lambda,
                                       uint64_t seed,
                                       struct MaskregSession **out);

// Number of features, or 0 for a null session.
//
// # Safety
// `session` must be null or a live handle from [`maskreg_session_new`].
size_t maskreg_session_p(const struct MaskregSession *session);

// Makes one party deviate on subsequent runs. `agency` is 1-based and
// ignored for `PerturbResult`, which is always the cloud.
//
// # Safety
// `session` must be a live handle.
enum MaskregStatus maskreg_session_inject_tamper(struct MaskregSession *session,
                                                 enum MaskregTamper action,
                                                 uint8_t agency,
                                                 double magnitude);

// Runs the protocol and writes the decrypted coefficients into `beta`
// (`beta_len` must equal p).
//
// # Safety
// `session` must be a live handle, `beta` must point to `beta_len`
// writable doubles, and `result` must be null or writable.
enum MaskregStatus maskreg_session_run(const struct MaskregSession *session,
                                       enum MaskregTransport transport,
                                       double *beta,
                                       size_t beta_len,
                                       struct MaskregRunResult *result);

// Frees a session. Null is a no-op.
//
// # Safety
// `session` must be null or a handle not yet freed.
void maskreg_session_free(struct MaskregSession *session);

// Runs a full experiment described by a TOML config and writes its files.
// `exit_code` receives 0 (accepted) or 2 (tampered).
//
// # Safety
// `config_toml` must be a nul-terminated string; `exit_code` null or writable.
enum MaskregStatus maskreg_run_config(const char *config_toml, int32_t *exit_code);

// Probability ratio of the Gaussian projection event; see the library docs.
//
// # Safety
// `out` must be writable.
enum MaskregStatus maskreg_ldp_ratio(double t,
                                     double norm1,
                                     double norm2,
                                     double sigma,
                                     double *out);

// Solvability class of the chosen-plaintext system.
//
// # Safety
// `out` must be writable.
enum MaskregStatus maskreg_cpa_rank(size_t n, size_t p, size_t rank, enum MaskregRankClass *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASKREG_H */
