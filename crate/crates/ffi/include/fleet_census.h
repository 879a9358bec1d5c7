#ifndef FLEET_CENSUS_H
#define FLEET_CENSUS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of vehicle classes.
 */
#define FC_CLASS_COUNT 4

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_IO = 3,
  FC_STATUS_PARSE = 4,
  FC_STATUS_NOT_FOUND = 5,
  FC_STATUS_SHAPE = 6,
  FC_STATUS_FORMAT = 7,
  FC_STATUS_NO_DATA = 8,
  FC_STATUS_PANIC = 99,
} FcStatus;

/**
 * Opaque 4x4 confusion matrix.
 */
typedef struct FcConfusion FcConfusion;

/**
 * Opaque trained classifier head.
 */
typedef struct FcHead FcHead;

/**
 * Opaque make/model registry.
 */
typedef struct FcRegistry FcRegistry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *fc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Classify by gross vehicle mass (tonnes) and height (metres).
 *
 * # Safety
 * `out_class` and `out_warning` must be valid for writes.
 */
enum FcStatus fc_classify_physical(double gvm_tons,
                                   double height_m,
                                   uint32_t *out_class,
                                   bool *out_warning);

/**
 * Load a registry TSV, or the bundled registry when `path` is NULL.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must be valid for writes.
 */
enum FcStatus fc_registry_load(const char *path, struct FcRegistry **out);

/**
 * Number of models in the registry (0 for NULL).
 *
 * # Safety
 * `registry` must be NULL or a live handle.
 */
size_t fc_registry_len(const struct FcRegistry *registry);

/**
 * Class code of a registered make and model. Names are matched
 * case-insensitively with whitespace collapsed.
 *
 * # Safety
 * `registry` must be a live handle, `make`/`model` NUL-terminated strings and
 * `out_class` valid for writes.
 */
enum FcStatus fc_registry_lookup(const struct FcRegistry *registry,
                                 const char *make,
                                 const char *model,
                                 uint32_t *out_class);

/**
 * # Safety
 * `registry` must be NULL or a handle from [`fc_registry_load`] not yet freed.
 */
void fc_registry_free(struct FcRegistry *registry);

/**
 * Load a head checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum FcStatus fc_head_load(const char *path, struct FcHead **out);

/**
 * Feature width the head expects (0 for NULL).
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
size_t fc_head_input_dim(const struct FcHead *head);

/**
 * Backbone id recorded in the checkpoint; owned by the handle.
 *
 * # Safety
 * `head` must be NULL or a live handle.
 */
const char *fc_head_backbone(const struct FcHead *head);

/**
 * Predict one feature vector. `out_probabilities` may be NULL; otherwise it
 * receives [`FC_CLASS_COUNT`] values.
 *
 * # Safety
 * `features` must point to `len` floats; output pointers must be valid for writes.
 */
enum FcStatus fc_head_predict(const struct FcHead *head,
                              const float *features,
                              size_t len,
                              uint32_t *out_class,
                              double *out_probabilities);

/**
 * # Safety
 * `head` must be NULL or a handle from [`fc_head_load`] not yet freed.
 */
void fc_head_free(struct FcHead *head);

/**
 * Validate a feature store file, reporting its row count and width.
 *
 * # Safety
 * `path` must be a NUL-terminated string; outputs must be valid for writes.
 */
enum FcStatus fc_feature_store_check(const char *path, uint64_t *out_rows, size_t *out_dim);

struct FcConfusion *fc_confusion_new(void);

/**
 * Count one (true, predicted) pair.
 *
 * # Safety
 * `m` must be a live handle.
 */
enum FcStatus fc_confusion_add(struct FcConfusion *m, uint32_t truth, uint32_t predicted);

/**
 * Copy the raw counts, row-major (true class by predicted class), into `out`.
 *
 * # Safety
 * `m` must be a live handle; `out` must hold 16 values.
 */
enum FcStatus fc_confusion_counts(const struct FcConfusion *m, uint64_t *out);

/**
 * Row-normalized matrix, row-major. Rows without samples are all zero.
 *
 * # Safety
 * `m` must be a live handle; `out` must hold 16 values.
 */
enum FcStatus fc_confusion_normalized(const struct FcConfusion *m, double *out);

/**
 * Overall accuracy; [`FcStatus::NoData`] when nothing has been counted.
 *
 * # Safety
 * `m` must be a live handle; `out` must be valid for writes.
 */
enum FcStatus fc_confusion_accuracy(const struct FcConfusion *m, double *out);

/**
 * # Safety
 * `m` must be NULL or a handle from [`fc_confusion_new`] not yet freed.
 */
void fc_confusion_free(struct FcConfusion *m);

/**
 * Display name of a class code ("Light-duty", ...), or NULL when out of range.
 */
const char *fc_class_name(uint32_t class_);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEET_CENSUS_H */
