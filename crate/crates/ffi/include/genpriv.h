#ifndef GENPRIV_H
#define GENPRIV_H

#pragma once

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GenprivStatus {
  GENPRIV_STATUS_OK = 0,
  GENPRIV_STATUS_NULL_POINTER = 1,
  GENPRIV_STATUS_INVALID_ARGUMENT = 2,
  GENPRIV_STATUS_INVALID_UTF8 = 3,
  GENPRIV_STATUS_BUFFER_TOO_SMALL = 4,
  GENPRIV_STATUS_LOSS_ERROR = 5,
  GENPRIV_STATUS_GENERATE_ERROR = 6,
  GENPRIV_STATUS_MODEL_ERROR = 7,
  GENPRIV_STATUS_PANIC = 99,
} GenprivStatus;

/**
 * Opaque text classifier restored from a checkpoint.
 */
typedef struct GenprivModel GenprivModel;

/**
 * Mirror of the distillation hyperparameters.
 */
typedef struct GenprivDistillConfig {
  double alpha;
  double beta;
  double tau;
  bool soften_student;
  bool normalize_sqdist;
} GenprivDistillConfig;

typedef struct GenprivLossBreakdown {
  double total;
  double ce_hard;
  double ce_soft;
  double emb_sqdist;
} GenprivLossBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *genpriv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *genpriv_version(void);

struct GenprivDistillConfig genpriv_distill_config_default(void);

/**
 * `-sum(target * ln(pred))` over `k` entries; both must be distributions.
 *
 * # Safety
 * `target` and `pred` point to `k` doubles; `out` to one.
 */
enum GenprivStatus genpriv_cross_entropy(const double *target,
                                         const double *pred,
                                         size_t k,
                                         double *out);

/**
 * `softmax(logits / tau)` into `out`.
 *
 * # Safety
 * `logits` and `out` point to `k` doubles.
 */
enum GenprivStatus genpriv_soften(const double *logits, size_t k, double tau, double *out);

/**
 * Squared Euclidean distance, divided by `d` when `normalize`.
 *
 * # Safety
 * `teacher` and `student` point to `d` doubles; `out` to one.
 */
enum GenprivStatus genpriv_embedding_sqdist(const double *teacher,
                                            const double *student,
                                            size_t d,
                                            bool normalize,
                                            double *out);

/**
 * The joint distillation objective for one sample. Optionally writes the
 * gradient with respect to the student logits (`k` doubles) and embedding
 * (`d` doubles); pass null to skip either.
 *
 * # Safety
 * Array arguments point to `k` or `d` doubles as named; `cfg` and `out`
 * to one struct each.
 */
enum GenprivStatus genpriv_kd_loss(const double *target,
                                   const double *teacher_logits,
                                   const double *student_logits,
                                   size_t k,
                                   const double *teacher_embedding,
                                   const double *student_embedding,
                                   size_t d,
                                   const struct GenprivDistillConfig *cfg,
                                   struct GenprivLossBreakdown *out,
                                   double *grad_logits,
                                   double *grad_embedding);

/**
 * Renders the deterministic mock image for `prompt` as packed RGB8 rows.
 * `buf_len` must be at least `width * height * 3`.
 *
 * # Safety
 * `prompt` is a NUL-terminated string; `buf` points to `buf_len` bytes.
 */
enum GenprivStatus genpriv_mock_generate(const char *prompt,
                                         uint64_t seed,
                                         uint32_t width,
                                         uint32_t height,
                                         uint8_t *buf,
                                         size_t buf_len);

/**
 * Loads a baseline or student checkpoint written by the pipeline.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` points to writable storage for
 * one handle pointer.
 */
enum GenprivStatus genpriv_model_load(const char *path, struct GenprivModel **out);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` is null or a live handle.
 */
size_t genpriv_model_num_classes(const struct GenprivModel *model);

/**
 * Class probabilities for `text` into `probs` (`k` doubles, `k` equal to
 * the class count) and the arg-max class into `label`.
 *
 * # Safety
 * `model` is a live handle, `text` NUL-terminated, `probs` points to `k`
 * doubles and `label` to one `size_t`; `label` may be null.
 */
enum GenprivStatus genpriv_model_predict(const struct GenprivModel *model,
                                         const char *text,
                                         double *probs,
                                         size_t k,
                                         size_t *label);

/**
 * Releases a handle from [`genpriv_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` is null or a handle not yet freed.
 */
void genpriv_model_free(struct GenprivModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENPRIV_H */
