#pragma once

#include <string>

#include "mancount/tensor.hpp"

namespace mancount {

/// Reads a binary PGM (P5, maxval 255) into an {H, W} tensor with
/// values in [0, 1]. Malformed input raises ParseError naming the file
/// and byte offset.
Tensor read_pgm(const std::string& path);

/// Writes an {H, W} tensor with values in [0, 1] as binary PGM (P5,
/// maxval 255); values are quantized with round(v * 255).
void write_pgm(const std::string& path, const Tensor& image);

}  // namespace mancount
