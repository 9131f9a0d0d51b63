#ifndef EDGEOD_H
#define EDGEOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call.
 */
typedef enum EdgeodStatus {
  EdgeodStatus_Ok = 0,
  EdgeodStatus_NullPointer = 1,
  EdgeodStatus_InvalidArgument = 2,
  EdgeodStatus_ParseError = 3,
  EdgeodStatus_RuntimeError = 4,
} EdgeodStatus;

/**
 * Opaque streaming session. Create with `edgeod_session_new`, destroy with
 * `edgeod_session_free`.
 */
typedef struct EdgeodSession EdgeodSession;

/**
 * One joint deployment decision for the frame just pushed.
 */
typedef struct EdgeodDecision {
  /**
   * 1 when the pushed frame is a keyframe (must be processed), else 0.
   */
  uint8_t is_keyframe;
  /**
   * Frames until the next scheduled keyframe.
   */
  uintptr_t keyframe_offset;
  uintptr_t cpu_level;
  uintptr_t gpu_level;
  double prune_ratio;
  /**
   * Predicted service latency of the active configuration, in ms.
   */
  double predicted_latency_ms;
} EdgeodDecision;

/**
 * Creates a session from a device spec (TOML text), a pruning LUT (CSV text),
 * and the workload's largest layer footprint. Pass null for `device_toml` or
 * `lut_csv` to use the bundled defaults.
 *
 * # Safety
 * `out_session` must be a valid pointer; string arguments must be
 * NUL-terminated when non-null.
 */
enum EdgeodStatus edgeod_session_new(const char *device_toml,
                                     const char *lut_csv,
                                     uint64_t max_layer_bytes,
                                     double rt_tar_ms,
                                     double alpha,
                                     struct EdgeodSession **out_session);

/**
 * Loads trained coordinator weights (checkpoint text). Until a checkpoint is
 * loaded the session decides with the all-maxed dense configuration.
 *
 * # Safety
 * `session` must come from `edgeod_session_new`; `checkpoint_text` must be
 * NUL-terminated.
 */
enum EdgeodStatus edgeod_session_load_checkpoint(struct EdgeodSession *session,
                                                 const char *checkpoint_text);

/**
 * Pushes the next frame's similarity feature (to its predecessor, in [0, 1])
 * and writes the resulting decision.
 *
 * # Safety
 * `session` must come from `edgeod_session_new`; `out_decision` must be a
 * valid pointer.
 */
enum EdgeodStatus edgeod_session_push_frame(struct EdgeodSession *session,
                                            double similarity,
                                            struct EdgeodDecision *out_decision);

/**
 * Last error message of this session; the pointer stays valid until the next
 * call on the same session. Empty string when no error was recorded.
 *
 * # Safety
 * `session` must come from `edgeod_session_new`.
 */
const char *edgeod_session_last_error(const struct EdgeodSession *session);

/**
 * Destroys a session. Passing null is a no-op.
 *
 * # Safety
 * `session` must come from `edgeod_session_new` and not be used afterwards.
 */
void edgeod_session_free(struct EdgeodSession *session);

#endif  /* EDGEOD_H */
