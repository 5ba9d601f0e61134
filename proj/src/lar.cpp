#include "mancount/lar.hpp"

#include <cmath>

#include "mancount/ops.hpp"
#include "mancount/tape.hpp"

namespace mancount {

namespace {

struct Cosine {
  double dot = 0.0, na = 0.0, nb = 0.0;
  bool degenerate = false;
  double value = 0.0;  // G = 1 - dot/(na*nb), or 0 when degenerate
};

Cosine cosine_parts(const double* a, const double* b, std::size_t n) {
  Cosine c;
  double aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    c.dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  c.na = std::sqrt(aa);
  c.nb = std::sqrt(bb);
  c.degenerate = c.na < kEps || c.nb < kEps;
  c.value = c.degenerate ? 0.0 : 1.0 - c.dot / (c.na * c.nb);
  return c;
}

// dG/da = -b/(na nb) + cos * a/na^2, with cos = dot/(na nb)
void accumulate_cosine_grad(const Cosine& c, double g, const double* a,
                            const double* b, std::size_t n, double* da,
                            double* db) {
  if (c.degenerate || g == 0.0) return;
  const double inv = 1.0 / (c.na * c.nb);
  const double cosab = c.dot * inv;
  if (da) {
    const double sa = cosab / (c.na * c.na);
    for (std::size_t i = 0; i < n; ++i) da[i] += g * (-b[i] * inv + sa * a[i]);
  }
  if (db) {
    const double sb = cosab / (c.nb * c.nb);
    for (std::size_t i = 0; i < n; ++i) db[i] += g * (-a[i] * inv + sb * b[i]);
  }
}

}  // namespace

WeightedFeatures weighted_features(const Tensor& features,
                                   const RegionMaps& regions) {
  if (features.rank() != 3) {
    throw DimensionError("weighted_features: expected {C, H, W} features, got " +
                         shape_str(features.shape()));
  }
  if (features.extent(1) != regions.grid_h || features.extent(2) != regions.grid_w) {
    throw DimensionError("weighted_features: features " +
                         shape_str(features.shape()) + " do not share the " +
                         std::to_string(regions.grid_w) + "x" +
                         std::to_string(regions.grid_h) + " region grid");
  }
  WeightedFeatures wf;
  // E = Rt [WH x WH] * tokens(F) [WH x C]: the double contraction per row
  wf.e = matmul(regions.rtilde, tokens_from_features(features));
  wf.e_bar = mean_rows(wf.e);
  return wf;
}

Tensor deviation_penalty(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.extent(0) != b.extent(0)) {
    throw DimensionError("deviation_penalty: vectors must share one length, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.size();
  const Cosine c = cosine_parts(a.data(), b.data(), n);
  Tape* tape = joint_tape({&a, &b});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [a, b, c, n](Tape& t, const std::vector<double>& g) {
      double* da = a.tracked() ? t.grad_buf(a.node()).data() : nullptr;
      double* db = b.tracked() ? t.grad_buf(b.node()).data() : nullptr;
      accumulate_cosine_grad(c, g[0], a.data(), b.data(), n, da, db);
    };
  }
  if (tape) {
    return tape->record({1}, {c.value}, {node_of(a), node_of(b)},
                        std::move(backward));
  }
  return Tensor::scalar(c.value);
}

Tensor cosine_deviation_sum(const Tensor& e, const Tensor& b) {
  if (e.rank() != 2 || b.rank() != 1 || e.extent(1) != b.extent(0)) {
    throw DimensionError("cosine_deviation_sum: rows of " + shape_str(e.shape()) +
                         " must match " + shape_str(b.shape()));
  }
  const int m = e.extent(0);
  const std::size_t n = b.size();
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    total += cosine_parts(e.data() + i * n, b.data(), n).value;
  }
  Tape* tape = joint_tape({&e, &b});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [e, b, m, n](Tape& t, const std::vector<double>& g) {
      double* de = e.tracked() ? t.grad_buf(e.node()).data() : nullptr;
      double* db = b.tracked() ? t.grad_buf(b.node()).data() : nullptr;
      for (int i = 0; i < m; ++i) {
        const double* ei = e.data() + i * n;
        const Cosine c = cosine_parts(ei, b.data(), n);
        accumulate_cosine_grad(c, g[0], ei, b.data(), n, de ? de + i * n : nullptr,
                               db);
      }
    };
  }
  if (tape) {
    return tape->record({1}, {total}, {node_of(e), node_of(b)},
                        std::move(backward));
  }
  return Tensor::scalar(total);
}

Tensor lar_regularizer(const Tensor& features,
                       const std::vector<RegionMaps>& per_layer) {
  if (per_layer.empty()) {
    throw ContractError("lar_regularizer: needs at least one layer of region maps");
  }
  Tensor total;
  for (const RegionMaps& regions : per_layer) {
    WeightedFeatures wf = weighted_features(features, regions);
    Tensor r = cosine_deviation_sum(wf.e, wf.e_bar);
    total = total.empty() ? r : add(total, r);
  }
  return scale(total, 1.0 / static_cast<double>(per_layer.size()));
}

}  // namespace mancount
