#pragma once

#include <string>

#include "flexipatch/model.hpp"

namespace flexipatch {

// Self-describing checkpoint: one JSON header line (version, config,
// normalization stats, parameter names/shapes/byte offsets) followed by raw
// little-endian float32 parameter buffers in registration order.
void save_checkpoint(const Surrogate<float>& model, const std::string& path);
Surrogate<float> load_checkpoint(const std::string& path);

}  // namespace flexipatch
