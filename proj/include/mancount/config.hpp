#pragma once

#include <cstdint>
#include <string>

#include "mancount/model.hpp"

namespace mancount {

struct TrainConfig {
  double lr = 1e-3;  // toy default; 1e-5 remains selectable
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps = 2000;
  double delta = 0.9;
  double lambda = 100.0;
  int layers = 4;
  int dim = 64;
  int ffn_hidden = 0;  // 0 means 2 * dim
  int backbone_c1 = 16;
  int backbone_c2 = 32;
  double sigma = 8.0;  // posterior width in input pixels
  std::uint64_t seed = 1;
  bool use_lra = true;
  int checkpoint_every = 500;
  int max_token_grid = 32;  // region-map memory is O((WH)^2)

  ModelConfig model() const;
  void validate() const;
  std::string echo() const;  // one-line summary for reports/logs
};

/// Parses a UTF-8 "key = value" file; '#' starts a comment, blank lines
/// are ignored, unknown keys are rejected.
TrainConfig parse_train_config(const std::string& path);

/// Same syntax from a string (the CLI and tests use this directly).
TrainConfig parse_train_config_text(const std::string& text,
                                    const std::string& origin);

}  // namespace mancount
