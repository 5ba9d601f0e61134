#pragma once

#include <vector>

#include "mancount/point.hpp"
#include "mancount/tensor.hpp"

namespace mancount {

/// Per-annotation posteriors over the density grid: row j holds
/// Prob_j(p) for every cell p (flat index y*W' + x). At every cell the
/// column over j sums to 1 (softmax over annotations of the Gaussian
/// affinities). Empty when there are no annotations.
struct PosteriorMap {
  int n = 0;
  int grid_h = 0;
  int grid_w = 0;
  Tensor prob;  // [N x H'W']
};

/// Builds the posterior from annotations in input pixels; cell centers
/// sit at ((x + 0.5) * stride, (y + 0.5) * stride). Normalization uses
/// per-cell max subtraction.
PosteriorMap posterior_map(const std::vector<Point>& annotations, int grid_h,
                           int grid_w, double stride, double sigma);

/// Per-annotation deviations eps_j = |1 - sum_p Prob_j(p) * D_p| as a
/// tracked [N] tensor (empty tensor when N = 0).
Tensor instance_deviations(const PosteriorMap& post, const Tensor& density);

/// Keeps the K = max(1, floor(delta * N)) smallest deviations; stable
/// tie-breaking keeps the lower index. The mask is a constant during
/// backpropagation.
std::vector<int> instance_mask(const std::vector<double>& deviations,
                               double delta);

std::vector<double> to_values(const Tensor& t);

/// L_IA = sum_j m_j * eps_j.
Tensor instance_attention_loss(const Tensor& deviations,
                               const std::vector<int>& mask);

/// L = L_IA + lambda * R_lra.
Tensor total_loss(const Tensor& l_ia, const Tensor& r_lra, double lambda);

}  // namespace mancount
