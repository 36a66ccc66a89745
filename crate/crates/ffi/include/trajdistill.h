#ifndef TRAJDISTILL_H
#define TRAJDISTILL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum TdStatus {
  TD_STATUS_OK = 0,
  TD_STATUS_NULL_POINTER = 1,
  TD_STATUS_INVALID_ARGUMENT = 2,
  TD_STATUS_DIMENSION_MISMATCH = 3,
  TD_STATUS_TIMESTEP_ORDER = 4,
  TD_STATUS_BANK = 5,
  TD_STATUS_NON_FINITE = 6,
  TD_STATUS_CONFIG = 7,
  TD_STATUS_CHECKPOINT = 8,
  TD_STATUS_CSV = 9,
  TD_STATUS_IO = 10,
  TD_STATUS_UTF8 = 11,
  TD_STATUS_PANIC = 12,
} TdStatus;

// Opaque trainer handle.
typedef struct TdTrainer TdTrainer;

// Summary of the last main-loop iteration.
typedef struct TdIterationStats {
  // Zero-based index of the iteration.
  uint64_t iteration;
  double l_std;
  double l_adv_g;
  double l_adv_d;
  uint64_t solver_steps;
  uint64_t teacher_evals;
  uint64_t bank_occupancy;
} TdIterationStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *td_version(void);

// Message of the last failed call on this thread, or "" after a success.
// Valid until the next call into the library from this thread.
const char *td_last_error(void);

// New trainer from configuration text (`[section]` / `key = value`);
// null or empty text selects the defaults.
//
// # Safety
// `config` is null or a NUL-terminated string; `out` is writable.
enum TdStatus td_trainer_new(const char *config, struct TdTrainer **out);

// Trainer restored from a checkpoint file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum TdStatus td_trainer_load(const char *path, struct TdTrainer **out);

// # Safety
// `trainer` is a live handle; `path` is a NUL-terminated string.
enum TdStatus td_trainer_save(const struct TdTrainer *trainer, const char *path);

// Releases a handle; null is ignored.
//
// # Safety
// `trainer` is null or a handle not yet freed.
void td_trainer_free(struct TdTrainer *trainer);

// Runs the remaining warmup steps. `last_loss` may be null.
//
// # Safety
// `trainer` is a live handle; `last_loss` is null or writable.
enum TdStatus td_trainer_warmup(struct TdTrainer *trainer, double *last_loss);

// Runs `iterations` main-loop iterations (finishing warmup first if
// needed). `last` may be null.
//
// # Safety
// `trainer` is a live handle; `last` is null or writable.
enum TdStatus td_trainer_train(struct TdTrainer *trainer,
                               uint64_t iterations,
                               struct TdIterationStats *last);

// Main-loop iterations completed; 0 for a null handle.
//
// # Safety
// `trainer` is null or a live handle.
uint64_t td_trainer_iteration(const struct TdTrainer *trainer);

// Data dimension; 0 for a null handle.
//
// # Safety
// `trainer` is null or a live handle.
uintptr_t td_trainer_dim(const struct TdTrainer *trainer);

// `n` student endpoints with `nfe` jumps from fresh noised starts.
// Writes `n * dim` coordinates row-major into `points` and, when not
// null, `n` class labels into `labels`.
//
// # Safety
// `trainer` is a live handle; `points` holds `n * dim` doubles; `labels`
// is null or holds `n` values.
enum TdStatus td_trainer_sample(const struct TdTrainer *trainer,
                                uintptr_t nfe,
                                uintptr_t n,
                                uint64_t seed,
                                double *points,
                                int64_t *labels);

// Consistency gap of the current student.
//
// # Safety
// `trainer` is a live handle; `gap` is writable.
enum TdStatus td_trainer_consistency_gap(const struct TdTrainer *trainer, double *gap);

// Sliced Wasserstein distance between `nfe`-jump student endpoints and
// full teacher rollouts, with the teacher-vs-teacher floor.
//
// # Safety
// `trainer` is a live handle; `distance` and `floor` are writable.
enum TdStatus td_trainer_endpoint_distance(const struct TdTrainer *trainer,
                                           uintptr_t nfe,
                                           double *distance,
                                           double *floor);

// Sweeps the one-step residual identity on a `steps`-step grid with
// `trials` draws per case. Failed rows are reported through `failures`,
// not the status.
//
// # Safety
// `max_error` and `failures` are writable.
enum TdStatus td_verify_theorem(uintptr_t steps,
                                uintptr_t trials,
                                uint64_t seed,
                                double *max_error,
                                uintptr_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJDISTILL_H */
