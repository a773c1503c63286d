#pragma once

#include <string>

#include "reid/model.hpp"

namespace reid {

// Checkpoint layout (little-endian):
//   bytes 0..7   magic "REIDCKP1"
//   bytes 8..15  u64 JSON header length L
//   bytes 16..16+L-1 JSON header
//   then raw f64 tensor payloads; header offsets are relative to the first
//   payload byte. The header carries the model config plus name -> {offset,
//   shape} maps for parameters and buffers, in registration order.
void save_checkpoint(const std::string& path, const Model& model);

// Rebuilds the model from the embedded config and restores every tensor.
Model load_checkpoint(const std::string& path);

// Restores into an existing model; every named tensor must match in shape.
void load_checkpoint_into(const std::string& path, Model& model);

// Config of a stored checkpoint without loading tensor payloads.
ModelConfig checkpoint_config(const std::string& path);

}  // namespace reid
