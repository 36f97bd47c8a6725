#pragma once

#include <optional>
#include <string>

#include "tgbfn/denoiser.hpp"
#include "tgbfn/guidance.hpp"
#include "tgbfn/shapes.hpp"

namespace tgbfn {

// Versioned binary container: magic, format version, a JSON metadata block
// (component tag, config, training step, seed, optional condition transform,
// array directory), then the named parameter arrays as little-endian f64 in
// the declared order. Writes go to a temp file and are renamed into place.

struct CheckpointInfo {
  std::string component;  // "denoiser" or "guidance"
  long train_step = 0;
  uint64_t seed = 0;
  std::optional<shapes::ConditionTransform> transform;
};

void save_denoiser_checkpoint(const std::string& path, const DenoiserParams& params,
                              const CheckpointInfo& info);
DenoiserParams load_denoiser_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

void save_guidance_checkpoint(const std::string& path, const GuidanceParams& params,
                              const CheckpointInfo& info);
GuidanceParams load_guidance_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

// Component tag stored in the file, without loading arrays.
std::string peek_checkpoint_component(const std::string& path);

}  // namespace tgbfn
