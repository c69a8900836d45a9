#ifndef ROOMTSE_H
#define ROOMTSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Bit set in [`rtse_model_clue_mask`] when the model reads `dis_mw`.
#define RTSE_CLUE_DIM 1

// Bit set in [`rtse_model_clue_mask`] when the model reads `rt60`.
#define RTSE_CLUE_RT 2

typedef enum RtseStatus {
  RTSE_STATUS_OK = 0,
  RTSE_STATUS_NULL_POINTER = 1,
  RTSE_STATUS_INVALID_ARGUMENT = 2,
  RTSE_STATUS_MISSING_CLUE = 3,
  RTSE_STATUS_IO = 4,
  RTSE_STATUS_CHECKPOINT = 5,
  RTSE_STATUS_NUMERIC = 6,
  RTSE_STATUS_PANIC = 7,
} RtseStatus;

// Opaque model handle.
typedef struct RtseModel RtseModel;

// Conditioning values. Set a field to NaN when the model's clue set does
// not use it.
typedef struct RtseClue {
  // Query distance in metres.
  double d_q;
  // Microphone-wall distances x, Lx-x, y, Ly-y, z, Lz-z in metres.
  double dis_mw[6];
  // Reverberation time in seconds.
  double rt60;
} RtseClue;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null when the last
// call succeeded. Valid until the next call on the same thread.
const char *rtse_last_error(void);

// Library version as a static NUL-terminated string.
const char *rtse_version(void);

// Loads a checkpoint file. On success `*out` owns a handle to release with
// [`rtse_model_free`].
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
enum RtseStatus rtse_model_load(const char *path, struct RtseModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`rtse_model_load`] and not be used afterwards.
void rtse_model_free(struct RtseModel *model);

// Number of trainable parameters, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t rtse_model_num_params(const struct RtseModel *model);

// Which room fields the model reads: a combination of [`RTSE_CLUE_DIM`]
// and [`RTSE_CLUE_RT`].
//
// # Safety
// `model` must be null or a live handle.
uint32_t rtse_model_clue_mask(const struct RtseModel *model);

// Extracts the speech at `clue` from a mono mixture of `len` samples at
// `rate` Hz, writing `len` samples to `out`.
//
// # Safety
// `mixture` and `out` must each point to `len` doubles; `clue` must be valid.
enum RtseStatus rtse_extract(const struct RtseModel *model,
                             const double *mixture,
                             size_t len,
                             uint32_t rate,
                             const struct RtseClue *clue,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROOMTSE_H */
