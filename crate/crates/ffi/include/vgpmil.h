#ifndef VGPMIL_H
#define VGPMIL_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum VgpmilStatus {
  VGPMIL_STATUS_OK = 0,
  VGPMIL_STATUS_NULL_POINTER = 1,
  VGPMIL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed CSV, inconsistent dataset or model file.
   */
  VGPMIL_STATUS_DATA = 3,
  /**
   * Factorization or quadrature failure.
   */
  VGPMIL_STATUS_NUMERICAL = 4,
  VGPMIL_STATUS_IO = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  VGPMIL_STATUS_INTERNAL = 6,
} VgpmilStatus;

/**
 * Mixing family for the augmented likelihood.
 */
typedef enum VgpmilPsi {
  VGPMIL_PSI_HYPERBOLIC_SECANT = 0,
  VGPMIL_PSI_GAMMA_MIX = 1,
} VgpmilPsi;

/**
 * Opaque bag dataset.
 */
typedef struct VgpmilDataset VgpmilDataset;

/**
 * Opaque trained model.
 */
typedef struct VgpmilModel VgpmilModel;

/**
 * Training options. Obtain defaults from [`vgpmil_train_options_default`].
 */
typedef struct VgpmilTrainOptions {
  size_t inducing;
  enum VgpmilPsi psi;
  /**
   * Only read when `psi` is `GammaMix`.
   */
  double alpha;
  double beta;
  double h;
  double variance;
  /**
   * Values `<= 0` select the feature dimension.
   */
  double lengthscale;
  /**
   * True selects `exp(-|x - x'| / 2l)` instead of the squared distance.
   */
  bool unsquared_norm;
  size_t max_epochs;
  size_t patience;
  size_t samples;
  bool hyperopt;
  uint64_t seed;
} VgpmilTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *vgpmil_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vgpmil_version(void);

/**
 * Reads a bag CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum VgpmilStatus vgpmil_dataset_load_csv(const char *path, struct VgpmilDataset **out);

/**
 * Draws a synthetic dataset with default generator settings apart from the
 * bag count and seed.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum VgpmilStatus vgpmil_dataset_generate(size_t n_bags, uint64_t seed, struct VgpmilDataset **out);

/**
 * Writes a dataset as bag CSV.
 *
 * # Safety
 * `data` must come from this library and `path` must be NUL-terminated.
 */
enum VgpmilStatus vgpmil_dataset_save_csv(const struct VgpmilDataset *data, const char *path);

/**
 * Number of bags, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t vgpmil_dataset_n_bags(const struct VgpmilDataset *data);

/**
 * Number of instances, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t vgpmil_dataset_n_instances(const struct VgpmilDataset *data);

/**
 * Feature dimension, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t vgpmil_dataset_dim(const struct VgpmilDataset *data);

/**
 * Releases a dataset. Null is a no-op.
 *
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void vgpmil_dataset_free(struct VgpmilDataset *data);

/**
 * Default training options.
 */
struct VgpmilTrainOptions vgpmil_train_options_default(void);

/**
 * Trains a model. `validation` may be null; when given it drives early
 * stopping. `options` may be null for defaults.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum VgpmilStatus vgpmil_train(const struct VgpmilDataset *data,
                               const struct VgpmilDataset *validation,
                               const struct VgpmilTrainOptions *options,
                               struct VgpmilModel **out);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum VgpmilStatus vgpmil_model_load(const char *path, struct VgpmilModel **out);

/**
 * Saves a model file.
 *
 * # Safety
 * `model` must be live and `path` NUL-terminated.
 */
enum VgpmilStatus vgpmil_model_save(const struct VgpmilModel *model, const char *path);

/**
 * Releases a model. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void vgpmil_model_free(struct VgpmilModel *model);

/**
 * Predicts every bag and instance of `data`.
 *
 * `bag_mean` and `bag_std` need room for `n_bags` values, in dataset bag
 * order. `instance_mean` and `instance_std` need `n_instances` values in
 * row order; either instance pointer may be null to skip them. `capacity`
 * arguments guard against short buffers.
 *
 * # Safety
 * Non-null buffers must hold at least their stated capacity.
 */
enum VgpmilStatus vgpmil_predict(const struct VgpmilModel *model,
                                 const struct VgpmilDataset *data,
                                 size_t samples,
                                 uint64_t seed,
                                 double *bag_mean,
                                 double *bag_std,
                                 size_t bag_capacity,
                                 double *instance_mean,
                                 double *instance_std,
                                 size_t instance_capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VGPMIL_H */
