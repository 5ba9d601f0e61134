#pragma once

#include <string>

#include "mancount/model.hpp"

namespace mancount {

/// Checkpoint format: magic "MANT", u32 LE format version, then a
/// sequence of named tensors to EOF, each as
///   u32 LE name length, UTF-8 name, u32 LE rank, u32 LE extents,
///   float32 LE payload (product of extents values).
/// Model hyperparameters travel as scalar "config/..." entries so a
/// checkpoint alone reconstructs the model. Payloads are float32; the
/// write/read/write round trip is bit-exact.
void save_checkpoint(const std::string& path, const ModelParams& params);

ModelParams load_checkpoint(const std::string& path);

}  // namespace mancount
