#pragma once

#include <vector>

#include "mancount/attention.hpp"
#include "mancount/tensor.hpp"

namespace mancount {

/// Attention-weighted features: row i of e is
///   E_i(c) = sum_{w,h} F(c, w, h) * Rt_i(w, h),
/// and e_bar is the mean of the E_i.
struct WeightedFeatures {
  Tensor e;      // [WH x C]
  Tensor e_bar;  // [C]
};

WeightedFeatures weighted_features(const Tensor& features,
                                   const RegionMaps& regions);

/// Cosine deviation G(a, b) = 1 - a.b / (|a| |b|), in [0, 2]; defined
/// as 0 (with zero gradient) when either norm is below eps.
Tensor deviation_penalty(const Tensor& a, const Tensor& b);

/// sum_i G(E_i, b) over the rows of e, as one differentiable node.
Tensor cosine_deviation_sum(const Tensor& e, const Tensor& b);

/// Local attention regularizer: for each layer's region maps, the sum
/// over all WH locations of G(E_i, E_bar) against the shared feature
/// map; the per-layer sums are averaged over the layers.
Tensor lar_regularizer(const Tensor& features,
                       const std::vector<RegionMaps>& per_layer);

}  // namespace mancount
