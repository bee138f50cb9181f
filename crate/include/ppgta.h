#ifndef PPGTA_H
#define PPGTA_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define PPGTA_OK 0

#define PPGTA_ERR_CONFIG 2

#define PPGTA_ERR_DIVERGED 3

#define PPGTA_ERR_CONTRACT 4

#define PPGTA_ERR_IO 5

#define PPGTA_ERR_NULL 6

/**
 * Opaque simulation session: a world plus an agent pose.
 */
typedef struct PpgtaSession PpgtaSession;

/**
 * Opaque world handle.
 */
typedef struct PpgtaWorld PpgtaWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ppgta_last_error(void);

/**
 * Builds a world from a config file (null path = defaults). Returns null
 * on failure; inspect `ppgta_last_error`.
 */
struct PpgtaWorld *ppgta_world_new(const char *config_path);

void ppgta_world_free(struct PpgtaWorld *world);

/**
 * Grid side length in tiles.
 */
int ppgta_world_size(const struct PpgtaWorld *world);

/**
 * Number of placed objects of interest.
 */
int ppgta_world_ooi_count(const struct PpgtaWorld *world);

/**
 * Writes the world dump to `path`.
 */
int ppgta_world_dump(const struct PpgtaWorld *world, const char *path);

/**
 * Starts a session at the given tile with a heading in 0..8. The world
 * handle stays owned by the caller.
 */
struct PpgtaSession *ppgta_session_new(const struct PpgtaWorld *world,
                                       int tile_x,
                                       int tile_y,
                                       int heading);

void ppgta_session_free(struct PpgtaSession *session);

/**
 * Applies one action (0..9) and returns 0, or an error code.
 */
int ppgta_session_step(struct PpgtaSession *session, int action);

/**
 * Copies the current 32x32 RGB frame (3072 bytes) into `out`.
 */
int ppgta_session_render(const struct PpgtaSession *session, uint8_t *out, uintptr_t out_len);

/**
 * Agent tile position and heading.
 */
int ppgta_session_pose(const struct PpgtaSession *session, int *tile_x, int *tile_y, int *heading);

/**
 * Number of ground-truth detections in the current view; fills up to
 * `cap` boxes as (x0, y0, x1, y1, type) quintuples.
 */
int ppgta_session_detect(const struct PpgtaSession *session, int *out, uintptr_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPGTA_H */
