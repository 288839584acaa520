#ifndef DRGT_H
#define DRGT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DrgtStatus {
  DRGT_STATUS_OK = 0,
  DRGT_STATUS_NULL_POINTER = 1,
  DRGT_STATUS_INVALID_UTF8 = 2,
  DRGT_STATUS_INVALID_ARGUMENT = 3,
  DRGT_STATUS_PARSE = 4,
  DRGT_STATUS_IO = 5,
  DRGT_STATUS_RUNTIME = 6,
  DRGT_STATUS_UNDEFINED = 7,
  DRGT_STATUS_PANIC = 8,
} DrgtStatus;

/**
 * Hashed circular fingerprint of one molecule.
 */
typedef struct DrgtFingerprint DrgtFingerprint;

/**
 * A loaded dataset, graph and trained checkpoint ready for scoring.
 */
typedef struct DrgtSession DrgtSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *drgt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *drgt_version(void);

/**
 * Parses `smiles` and computes its Morgan fingerprint.
 *
 * # Safety
 * `smiles` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrgtStatus drgt_fingerprint_new(const char *smiles,
                                     size_t radius,
                                     size_t nbits,
                                     struct DrgtFingerprint **out);

/**
 * # Safety
 * `fp` must come from [`drgt_fingerprint_new`] or be null.
 */
void drgt_fingerprint_free(struct DrgtFingerprint *fp);

/**
 * # Safety
 * `fp` must be a live fingerprint handle.
 */
size_t drgt_fingerprint_len(const struct DrgtFingerprint *fp);

/**
 * # Safety
 * `fp` must be a live fingerprint handle.
 */
size_t drgt_fingerprint_count_ones(const struct DrgtFingerprint *fp);

/**
 * Copies the bits as 0/1 bytes into `buf`, which must hold `len` bytes and
 * `len` must equal the fingerprint length.
 *
 * # Safety
 * `fp` must be live and `buf` must be writable for `len` bytes.
 */
enum DrgtStatus drgt_fingerprint_bits(const struct DrgtFingerprint *fp, uint8_t *buf, size_t len);

/**
 * Tanimoto similarity of two fingerprints of equal length.
 *
 * # Safety
 * Both handles must be live and `out` valid.
 */
enum DrgtStatus drgt_fingerprint_tanimoto(const struct DrgtFingerprint *a,
                                          const struct DrgtFingerprint *b,
                                          double *out);

/**
 * Area under the ROC curve with midranks for ties. Labels are 0 or 1.
 * Returns `Undefined` when either class is empty.
 *
 * # Safety
 * `scores` and `labels` must point to `n` values; `out` must be valid.
 */
enum DrgtStatus drgt_auroc(const double *scores, const double *labels, size_t n, double *out);

/**
 * Coefficient of determination. Returns `Undefined` for constant targets.
 *
 * # Safety
 * `y` and `pred` must point to `n` values; `out` must be valid.
 */
enum DrgtStatus drgt_r2(const double *y, const double *pred, size_t n, double *out);

/**
 * Probability of drawing at least `k` marked items in `n` draws without
 * replacement from `universe` items of which `marked` are marked.
 *
 * # Safety
 * `out` must be valid.
 */
enum DrgtStatus drgt_hypergeom_upper_tail(uint64_t universe,
                                          uint64_t marked,
                                          uint64_t n,
                                          uint64_t k,
                                          double *out);

/**
 * Opens a session from a TOML run configuration and a checkpoint. A null
 * `checkpoint` uses the configured one.
 *
 * # Safety
 * String arguments must be NUL-terminated or null where allowed; `out` valid.
 */
enum DrgtStatus drgt_session_open(const char *config,
                                  const char *checkpoint,
                                  struct DrgtSession **out);

/**
 * # Safety
 * `s` must come from [`drgt_session_open`] or be null.
 */
void drgt_session_free(struct DrgtSession *s);

/**
 * # Safety
 * `s` must be a live session.
 */
size_t drgt_session_num_drugs(const struct DrgtSession *s);

/**
 * # Safety
 * `s` must be a live session.
 */
size_t drgt_session_num_cells(const struct DrgtSession *s);

/**
 * Scores one drug-cell pair by name: a probability of sensitivity for
 * classification models, a response value for regression models.
 *
 * # Safety
 * `s` must be live, names NUL-terminated, `out` valid.
 */
enum DrgtStatus drgt_session_predict(const struct DrgtSession *s,
                                     const char *drug,
                                     const char *cell,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRGT_H */
