#pragma once

#include <cstdint>
#include <ostream>

namespace mancount {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  double step = 1e-5;
};

/// Runs the finite-difference suite: every differentiable op with a
/// randomized scalar probe, the attention/LAR/loss pipelines, and the
/// full model loss on a 16x16 two-annotation scene. Prints one line per
/// check; returns false if any max relative error exceeds tolerance.
bool run_gradcheck(const GradCheckOptions& options, std::ostream& log);

}  // namespace mancount
