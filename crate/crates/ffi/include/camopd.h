/* C ABI for the camopd training engine. Generated by cbindgen — do not edit. */

#ifndef CAMOPD_H
#define CAMOPD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum {
  // Success.
  CAMOPD_STATUS_OK = 0,
  // A required pointer argument was NULL.
  CAMOPD_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8 or named an unknown key.
  CAMOPD_STATUS_INVALID_ARGUMENT = 2,
  // The configuration failed validation or could not be parsed.
  CAMOPD_STATUS_INVALID_CONFIG = 3,
  // Training, I/O, or another runtime failure; see `camopd_last_error`.
  CAMOPD_STATUS_RUNTIME_FAILURE = 4,
  // An internal panic was caught at the boundary.
  CAMOPD_STATUS_INTERNAL_PANIC = 5,
} CamopdStatus;

// Opaque configuration handle (builder over the engine's run config).
typedef struct CamopdConfig CamopdConfig;

// Opaque handle to a finished run's summary.
typedef struct CamopdRun CamopdRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library, as a static NUL-terminated string.
const char *camopd_version(void);

// Message for the most recent failure on this thread (empty if none).
// Valid until the next failing call on the same thread.
const char *camopd_last_error(void);

// New configuration handle with default settings. Never NULL.
CamopdConfig *camopd_config_new(void);

// Release a configuration handle. NULL is a no-op.
//
// # Safety
// `cfg` must be NULL or a pointer from `camopd_config_new` not yet freed.
void camopd_config_free(CamopdConfig *cfg);

// Set an integer-valued field. Keys: seed, steps, n_g, eval_interval,
// spec_max_steps, reuse_epochs, batch_size, t_roll, n_eval, vocab, order.
//
// # Safety
// `cfg` must be a live handle; `key` a NUL-terminated string.
CamopdStatus camopd_config_set_u64(CamopdConfig *cfg, const char *key, uint64_t value);

// Set a float-valued field. Keys: rho_g, rho_d, r_g, r_d, coverage, eta,
// kappa, mix_ratio.
//
// # Safety
// `cfg` must be a live handle; `key` a NUL-terminated string.
CamopdStatus camopd_config_set_f64(CamopdConfig *cfg, const char *key, double value);

// Set the training mode: "vanilla", "camopd", or "decoupled-only".
//
// # Safety
// `cfg` must be a live handle; `mode` a NUL-terminated string.
CamopdStatus camopd_config_set_mode(CamopdConfig *cfg, const char *mode);

// Validate the configuration without running anything.
//
// # Safety
// `cfg` must be NULL or a live handle.
CamopdStatus camopd_config_validate(const CamopdConfig *cfg);

// Execute one full run (scenario build, specialization, training) into
// `out_dir`, writing the usual artifact set. On success `*out` owns the run
// summary; release it with `camopd_run_free`.
//
// # Safety
// `cfg` must be a live handle, `out_dir` a NUL-terminated path, `out` a
// valid pointer to receive the handle.
CamopdStatus camopd_run(const CamopdConfig *cfg, const char *out_dir, bool force, CamopdRun **out);

// Release a run handle. NULL is a no-op.
//
// # Safety
// `run` must be NULL or a pointer from `camopd_run` not yet freed.
void camopd_run_free(CamopdRun *run);

// Final evaluation KL against the general teacher, in nats.
//
// # Safety
// `run` must be a live handle; `out` a valid pointer.
CamopdStatus camopd_run_final_kl_general(const CamopdRun *run, double *out);

// Final evaluation KL against the domain teacher, in nats.
//
// # Safety
// `run` must be a live handle; `out` a valid pointer.
CamopdStatus camopd_run_final_kl_domain(const CamopdRun *run, double *out);

// Best (lowest) general-teacher evaluation KL seen during training.
//
// # Safety
// `run` must be a live handle; `out` a valid pointer.
CamopdStatus camopd_run_best_kl_general(const CamopdRun *run, double *out);

// Total rollouts consumed by training updates.
//
// # Safety
// `run` must be a live handle; `out` a valid pointer.
CamopdStatus camopd_run_consumed_rollouts(const CamopdRun *run, uint64_t *out);

// Optimizer steps taken by the specialization pre-phase.
//
// # Safety
// `run` must be a live handle; `out` a valid pointer.
CamopdStatus camopd_run_specialize_steps(const CamopdRun *run, uint64_t *out);

// Scenario attempt index that produced a specializable world (0-based).
//
// # Safety
// `run` must be a live handle; `out` a valid pointer.
CamopdStatus camopd_run_scenario_attempt(const CamopdRun *run, uint32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAMOPD_H */
