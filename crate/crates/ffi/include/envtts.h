#ifndef ENVTTS_H
#define ENVTTS_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
enum EnvttsStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  ENVTTS_STATUS_OK = 0,
  ENVTTS_STATUS_NULL_POINTER = 1,
  ENVTTS_STATUS_INVALID_ARGUMENT = 2,
  ENVTTS_STATUS_SHAPE_MISMATCH = 3,
  ENVTTS_STATUS_IO = 4,
  ENVTTS_STATUS_FORMAT = 5,
  ENVTTS_STATUS_DURATION_OVERFLOW = 6,
  ENVTTS_STATUS_BUFFER_TOO_SMALL = 7,
  ENVTTS_STATUS_INTERNAL = 8,
  ENVTTS_STATUS_PANIC = 9,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum EnvttsStatus EnvttsStatus;
#else
typedef int32_t EnvttsStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * A log-mel spectrogram, `n_mels` rows by `n_frames` columns.
 */
typedef struct EnvttsMel EnvttsMel;

/**
 * A trained velocity network with its front-end settings.
 */
typedef struct EnvttsModel EnvttsModel;

/**
 * Mono audio.
 */
typedef struct EnvttsWave EnvttsWave;

/**
 * Sampler settings. Zeroed fields take the library defaults.
 */
typedef struct EnvttsSynthOptions {
  uint64_t seed;
  /**
   * ODE steps; 0 means 32.
   */
  uint32_t n_steps;
  /**
   * 0 for Euler, 1 for midpoint.
   */
  uint32_t method;
  /**
   * Griffin-Lim iterations; 0 means 64.
   */
  uint32_t griffin_lim_iters;
} EnvttsSynthOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into this library from the same thread.
 */
const char *envtts_last_error(void);

/**
 * Static version string.
 */
const char *envtts_version(void);

/**
 * Loads a checkpoint written by the trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
EnvttsStatus envtts_model_load(const char *path, struct EnvttsModel **out);

/**
 * # Safety
 * `model` must come from [`envtts_model_load`] or be null.
 */
void envtts_model_free(struct EnvttsModel *model);

/**
 * Sample rate the model was trained at, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t envtts_model_sample_rate(const struct EnvttsModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t envtts_model_n_mels(const struct EnvttsModel *model);

/**
 * Copies `len` samples into a new waveform.
 *
 * # Safety
 * `samples` must point to `len` readable floats; `out` must be writable.
 */
EnvttsStatus envtts_wave_new(const float *samples,
                             size_t len,
                             uint32_t sample_rate,
                             struct EnvttsWave **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
EnvttsStatus envtts_wave_read(const char *path, struct EnvttsWave **out);

/**
 * Writes a 32-bit float WAV.
 *
 * # Safety
 * `wave` must be a live handle; `path` a NUL-terminated string.
 */
EnvttsStatus envtts_wave_write(const struct EnvttsWave *wave, const char *path);

/**
 * # Safety
 * `wave` must be a live handle or null.
 */
size_t envtts_wave_len(const struct EnvttsWave *wave);

/**
 * # Safety
 * `wave` must be a live handle or null.
 */
uint32_t envtts_wave_sample_rate(const struct EnvttsWave *wave);

/**
 * Copies the samples into `buf`, which must hold at least
 * [`envtts_wave_len`] floats.
 *
 * # Safety
 * `wave` must be a live handle; `buf` must point to `cap` writable floats.
 */
EnvttsStatus envtts_wave_copy(const struct EnvttsWave *wave, float *buf, size_t cap);

/**
 * # Safety
 * `wave` must come from this library or be null.
 */
void envtts_wave_free(struct EnvttsWave *wave);

/**
 * Log-mel analysis with the model's front-end settings.
 *
 * # Safety
 * `model` and `wave` must be live handles; `out` must be writable.
 */
EnvttsStatus envtts_mel_from_wave(const struct EnvttsModel *model,
                                  const struct EnvttsWave *wave,
                                  struct EnvttsMel **out);

/**
 * # Safety
 * `mel` must be a live handle or null; the out pointers may be null.
 */
EnvttsStatus envtts_mel_dims(const struct EnvttsMel *mel, size_t *n_mels, size_t *n_frames);

/**
 * Copies the values row-major (band by band) into `buf`.
 *
 * # Safety
 * `mel` must be a live handle; `buf` must point to `cap` writable floats.
 */
EnvttsStatus envtts_mel_copy(const struct EnvttsMel *mel, float *buf, size_t cap);

/**
 * # Safety
 * `mel` must come from this library or be null.
 */
void envtts_mel_free(struct EnvttsMel *mel);

/**
 * Synthesizes `gen_text` in the voice of `reference` over the environment
 * in `env`, at the given SER. `out_mel` may be null.
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, `opts` null or readable,
 * and `out_wave` writable.
 */
EnvttsStatus envtts_synthesize(const struct EnvttsModel *model,
                               const struct EnvttsWave *reference,
                               const char *ref_text,
                               const struct EnvttsWave *env,
                               const char *gen_text,
                               double ser,
                               const struct EnvttsSynthOptions *opts,
                               struct EnvttsWave **out_wave,
                               struct EnvttsMel **out_mel);

/**
 * Clamped linear map from SNR in dB to SER in [0, 1].
 */
double envtts_snr_to_ser(double snr_db);

/**
 * Frames to generate for `gen_text` given a reference of `ref_frames`
 * frames transcribed as `ref_text`.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be writable.
 */
EnvttsStatus envtts_estimate_frames(const char *gen_text,
                                    const char *ref_text,
                                    size_t ref_frames,
                                    size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENVTTS_H */
