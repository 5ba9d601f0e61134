#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mancount/point.hpp"
#include "mancount/tensor.hpp"

namespace mancount {

struct SceneParams {
  int size = 64;                   // Win = Hin
  int count_min = 5;
  int count_max = 50;
  double head_radius = 1.6;        // base blob radius in pixels
  double perspective_slope = 1.5;  // radius grows linearly with y
  double blob_amplitude = 0.7;
  double noise_level = 0.04;

  /// r(y) = head_radius * (1 + perspective_slope * y / size)
  double radius_at(double y) const {
    return head_radius * (1.0 + perspective_slope * y / size);
  }
  void validate() const;
};

struct CrowdScene {
  Tensor image;  // {H, W}, values in [0, 1]
  std::vector<Point> points;
  std::uint64_t seed = 0;
};

/// Deterministic scene: the count is uniform in [count_min, count_max],
/// head positions favor the far (small-y, small-radius) rows, each head
/// renders as an isotropic Gaussian blob of perspective-scaled radius,
/// and seeded uniform noise is added before clamping to [0, 1].
CrowdScene generate_scene(const SceneParams& params, std::uint64_t seed);

/// Directory layout: manifest.txt with one "img/NNNN.pgm ann/NNNN.csv"
/// line per scene; binary PGM images (P5, maxval 255); annotation CSV
/// lines "x,y" with decimal floats, no header.
void write_dataset(const std::vector<CrowdScene>& scenes, const std::string& dir);

std::vector<CrowdScene> read_dataset(const std::string& dir);

}  // namespace mancount
