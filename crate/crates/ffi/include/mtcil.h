#ifndef MTCIL_H
#define MTCIL_H

#include <stddef.h>
#include <stdint.h>

/**
 * Terminal event codes written by [`mtcil_episode_step`].
 */
#define MTCIL_RUNNING -1

#define MTCIL_SUCCESS 0

#define MTCIL_POOR_END_POSE 1

#define MTCIL_TIMEOUT 2

#define MTCIL_LANE_INVASION 3

#define MTCIL_COLLISION 4

/**
 * Number of bytes in one observation raster.
 */
#define MTCIL_RASTER_LEN RASTER_LEN

/**
 * Result code of every call.
 */
typedef enum MtcilStatus {
  MTCIL_STATUS_OK = 0,
  MTCIL_STATUS_NULL_POINTER = 1,
  MTCIL_STATUS_INVALID_ARGUMENT = 2,
  MTCIL_STATUS_IO = 3,
  MTCIL_STATUS_NON_FINITE = 4,
  MTCIL_STATUS_FORMAT = 5,
  MTCIL_STATUS_INTERNAL = 6,
} MtcilStatus;

typedef struct MtcilEpisode MtcilEpisode;

typedef struct MtcilPolicy MtcilPolicy;

/**
 * Terminal-event rates of a benchmark run.
 */
typedef struct MtcilRates {
  size_t episodes;
  double sr;
  double pr;
  double tr;
  double lr;
  double cr;
} MtcilRates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (truncated and
 * nul-terminated) and returns the full message length, or 0 if none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t mtcil_last_error(char *buf, size_t len);

/**
 * Spawns an episode. `weather` is a profile name such as `"ClearNoon"`.
 *
 * # Safety
 * `weather` must be a nul-terminated string; `out` must be writable.
 */
enum MtcilStatus mtcil_episode_new(uint32_t scene,
                                   uint32_t route,
                                   const char *weather,
                                   uint64_t seed,
                                   struct MtcilEpisode **out);

/**
 * # Safety
 * `ep` must come from [`mtcil_episode_new`] and not be used afterwards.
 */
void mtcil_episode_free(struct MtcilEpisode *ep);

/**
 * Renders the current observation into `raster` (channel-major, 5x48x48)
 * and writes the ego speed.
 *
 * # Safety
 * `raster` must be writable for `len` bytes; `speed` must be writable.
 */
enum MtcilStatus mtcil_episode_observe(struct MtcilEpisode *ep,
                                       uint8_t *raster,
                                       size_t len,
                                       double *speed);

/**
 * Writes the current lateral and longitudinal command indices.
 *
 * # Safety
 * `lat` and `lon` must be writable.
 */
enum MtcilStatus mtcil_episode_commands(const struct MtcilEpisode *ep, int32_t *lat, int32_t *lon);

/**
 * Advances one tick. Controls are clipped to [-1, 1]. Writes a terminal
 * code, [`MTCIL_RUNNING`] while the episode continues.
 *
 * # Safety
 * `terminal` must be writable.
 */
enum MtcilStatus mtcil_episode_step(struct MtcilEpisode *ep,
                                    double steer,
                                    double accel,
                                    int32_t *terminal);

/**
 * Current tick and ego pose `(x, y, heading)` and speed.
 *
 * # Safety
 * `state` must be writable for 4 doubles; `tick` must be writable.
 */
enum MtcilStatus mtcil_episode_state(const struct MtcilEpisode *ep, uint32_t *tick, double *state);

/**
 * Loads a checkpoint written by `mtcil train`.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum MtcilStatus mtcil_policy_load(const char *path, struct MtcilPolicy **out);

/**
 * # Safety
 * `policy` must come from [`mtcil_policy_load`] and not be used afterwards.
 */
void mtcil_policy_free(struct MtcilPolicy *policy);

/**
 * Clipped controls for one observation and command pair.
 *
 * # Safety
 * `raster` must be readable for `len` bytes; `steer` and `accel` writable.
 */
enum MtcilStatus mtcil_policy_act(const struct MtcilPolicy *policy,
                                  const uint8_t *raster,
                                  size_t len,
                                  double speed,
                                  int32_t lat,
                                  int32_t lon,
                                  double *steer,
                                  double *accel);

/**
 * Runs the benchmark for `condition` (`"TT"`, `"tT"` or `"tt"`). A null
 * `policy` evaluates the scripted expert.
 *
 * # Safety
 * `condition` must be a nul-terminated string; `out` must be writable.
 */
enum MtcilStatus mtcil_evaluate(const struct MtcilPolicy *policy,
                                const char *condition,
                                uint32_t episodes_per_route,
                                uint64_t seed,
                                struct MtcilRates *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTCIL_H */
