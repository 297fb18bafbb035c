#include "forge/error.hpp"

namespace forge {

const char* status_name(forge_status code) {
  switch (code) {
    case FORGE_OK: return "ok";
    case FORGE_ERR_USAGE: return "usage";
    case FORGE_ERR_IO: return "io";
    case FORGE_ERR_BAD_JSON: return "bad_json";
    case FORGE_ERR_VERSION_MISMATCH: return "version_mismatch";
    case FORGE_ERR_OVERLAPPING_FIELDS: return "overlapping_fields";
    case FORGE_ERR_COVERAGE_GAP: return "coverage_gap";
    case FORGE_ERR_WIDTH_MISMATCH: return "width_mismatch";
    case FORGE_ERR_UNKNOWN_ROTATION_TYPE: return "unknown_rotation_type";
    case FORGE_ERR_TRUNCATED: return "truncated";
    case FORGE_ERR_NON_FINITE: return "non_finite";
    case FORGE_ERR_STATS_INCOMPLETE: return "stats_incomplete";
    case FORGE_ERR_SHAPE_MISMATCH: return "shape_mismatch";
    case FORGE_ERR_NON_SCALAR_LOSS: return "non_scalar_loss";
    case FORGE_ERR_UNKNOWN_EMBODIMENT: return "unknown_embodiment";
    case FORGE_ERR_UNKNOWN_INSTRUCTION: return "unknown_instruction";
    case FORGE_ERR_UNKNOWN_FIELD: return "unknown_field";
    case FORGE_ERR_DIM_MISMATCH: return "dim_mismatch";
    case FORGE_ERR_TAU_RANGE: return "tau_range";
    case FORGE_ERR_EMPTY_DATASET: return "empty_dataset";
    case FORGE_ERR_SHORT_EPISODE: return "short_episode";
    case FORGE_ERR_DEGENERATE_ROTATION: return "degenerate_rotation";
    case FORGE_ERR_MIXED_EMBODIMENTS: return "mixed_embodiments";
    case FORGE_ERR_EMPTY_SCORES: return "empty_scores";
    case FORGE_ERR_BAD_CONFIG: return "bad_config";
    case FORGE_ERR_VALIDATION_FAILED: return "validation_failed";
    case FORGE_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

}  // namespace forge
