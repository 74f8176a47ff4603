#ifndef PREXTRACT_H
#define PREXTRACT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
#define PX_OK 0

#define PX_ERR_RUNTIME 1

#define PX_ERR_INVALID 2

#define PX_ERR_BUDGET 3

#define PX_ERR_REMOTE 4

#define PX_ERR_NULL 5

typedef struct px_config px_config;

typedef struct px_encoder px_encoder;

typedef struct px_ledger px_ledger;

typedef struct px_substitute px_substitute;

typedef struct px_task px_task;

typedef struct px_victim px_victim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message (UTF-8, NUL-terminated, truncated to fit)
 * into `buf`. Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
size_t px_last_error_message(char *buf, size_t len);

/**
 * Release a handle previously returned by this library. Null is a
 * no-op.
 *
 * # Safety
 * `h` must be a pointer returned by this library and not freed before.
 */
void px_config_free(struct px_config *h);

/**
 * Release a handle previously returned by this library. Null is a
 * no-op.
 *
 * # Safety
 * `h` must be a pointer returned by this library and not freed before.
 */
void px_task_free(struct px_task *h);

/**
 * Release a handle previously returned by this library. Null is a
 * no-op.
 *
 * # Safety
 * `h` must be a pointer returned by this library and not freed before.
 */
void px_victim_free(struct px_victim *h);

/**
 * Release a handle previously returned by this library. Null is a
 * no-op.
 *
 * # Safety
 * `h` must be a pointer returned by this library and not freed before.
 */
void px_encoder_free(struct px_encoder *h);

/**
 * Release a handle previously returned by this library. Null is a
 * no-op.
 *
 * # Safety
 * `h` must be a pointer returned by this library and not freed before.
 */
void px_substitute_free(struct px_substitute *h);

/**
 * Release a handle previously returned by this library. Null is a
 * no-op.
 *
 * # Safety
 * `h` must be a pointer returned by this library and not freed before.
 */
void px_ledger_free(struct px_ledger *h);

/**
 * Load and validate a TOML experiment config.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
int32_t px_config_load(const char *path, struct px_config **out);

/**
 * Build the synthetic task (victim data, proxy pool, test set) for one
 * seed.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` a valid pointer.
 */
int32_t px_task_build(const struct px_config *cfg, uint64_t seed, struct px_task **out);

/**
 * Train the victim and seal it behind the metered oracle.
 *
 * # Safety
 * `cfg` and `task` must be live handles; `out` a valid pointer.
 */
int32_t px_victim_train(const struct px_config *cfg,
                        const struct px_task *task,
                        uint64_t seed,
                        struct px_victim **out);

/**
 * Pretrain an encoder on the task's proxy pool. `method` is one of
 * "rs", "bae", "dae", "moco", "simclr".
 *
 * # Safety
 * `cfg` and `task` must be live handles; `method` NUL-terminated; `out`
 * a valid pointer.
 */
int32_t px_pretrain(const struct px_config *cfg,
                    const struct px_task *task,
                    const char *method,
                    uint64_t seed,
                    struct px_encoder **out);

/**
 * Save an encoder artifact (checkpoint plus JSON sidecar).
 *
 * # Safety
 * `enc` must be a live handle; `path` NUL-terminated.
 */
int32_t px_encoder_save(const struct px_encoder *enc, const char *path);

/**
 * Load an encoder artifact saved by `px_encoder_save`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` a valid pointer.
 */
int32_t px_encoder_load(const char *path, struct px_encoder **out);

/**
 * Fresh query ledger with the given budget and unit price.
 */
struct px_ledger *px_ledger_new(uint64_t budget, double unit_price);

/**
 * Queries charged so far.
 *
 * # Safety
 * `ledger` must be a live handle.
 */
uint64_t px_ledger_spent(const struct px_ledger *ledger);

/**
 * Run the active extraction loop against the victim, spending exactly
 * `budget` queries from `ledger`.
 *
 * # Safety
 * All handles must be live; `out` a valid pointer.
 */
int32_t px_extract(const struct px_config *cfg,
                   const struct px_victim *victim,
                   const struct px_task *task,
                   const struct px_encoder *encoder,
                   uint64_t budget,
                   uint64_t seed,
                   struct px_ledger *ledger,
                   struct px_substitute **out);

/**
 * Fidelity and accuracy of a substitute on the task's test set.
 * `accuracy` may be null if not wanted.
 *
 * # Safety
 * Handles must be live; `fidelity` must be a valid pointer.
 */
int32_t px_substitute_score(const struct px_substitute *substitute,
                            const struct px_victim *victim,
                            const struct px_task *task,
                            double *fidelity,
                            double *accuracy);

/**
 * One-call campaign: load the config at `config_path`, run the full
 * grid, write the CSV outputs under `out_dir`.
 *
 * # Safety
 * Both strings must be NUL-terminated.
 */
int32_t px_campaign_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PREXTRACT_H */
