#include "mancount/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mancount/ops.hpp"

namespace mancount {

PosteriorMap posterior_map(const std::vector<Point>& annotations, int grid_h,
                           int grid_w, double stride, double sigma) {
  if (sigma <= 0.0) {
    throw ConfigError("posterior_map: sigma must be positive");
  }
  if (grid_h <= 0 || grid_w <= 0 || stride <= 0.0) {
    throw ConfigError("posterior_map: invalid grid geometry");
  }
  PosteriorMap post;
  post.n = static_cast<int>(annotations.size());
  post.grid_h = grid_h;
  post.grid_w = grid_w;
  if (post.n == 0) return post;
  const int cells = grid_h * grid_w;
  post.prob = Tensor({post.n, cells});
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> logp(static_cast<std::size_t>(post.n));
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      double mx = -1e300;
      for (int j = 0; j < post.n; ++j) {
        const double dx = cx - annotations[static_cast<std::size_t>(j)].x;
        const double dy = cy - annotations[static_cast<std::size_t>(j)].y;
        logp[static_cast<std::size_t>(j)] = -(dx * dx + dy * dy) * inv_two_sigma2;
        mx = std::max(mx, logp[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (int j = 0; j < post.n; ++j) {
        logp[static_cast<std::size_t>(j)] = std::exp(logp[static_cast<std::size_t>(j)] - mx);
        z += logp[static_cast<std::size_t>(j)];
      }
      const int p = y * grid_w + x;
      for (int j = 0; j < post.n; ++j) {
        post.prob.at(j, p) = logp[static_cast<std::size_t>(j)] / z;
      }
    }
  }
  return post;
}

Tensor instance_deviations(const PosteriorMap& post, const Tensor& density) {
  if (post.n == 0) return Tensor();
  if (density.rank() != 2 || density.extent(0) != post.grid_h ||
      density.extent(1) != post.grid_w) {
    throw DimensionError("instance_deviations: density " +
                         shape_str(density.shape()) + " does not match the " +
                         std::to_string(post.grid_w) + "x" +
                         std::to_string(post.grid_h) + " posterior grid");
  }
  const int cells = post.grid_h * post.grid_w;
  Tensor flat = reshape(density, {cells});
  const Tensor one = Tensor::scalar(1.0);
  std::vector<Tensor> terms;
  terms.reserve(static_cast<std::size_t>(post.n));
  for (int j = 0; j < post.n; ++j) {
    Tensor row({cells}, std::vector<double>(post.prob.data() + static_cast<std::size_t>(j) * cells,
                                            post.prob.data() + static_cast<std::size_t>(j + 1) * cells));
    Tensor mass = sum_all(hadamard(row, flat));
    terms.push_back(abs_t(sub(one, mass)));
  }
  return concat_scalars(terms);
}

std::vector<double> to_values(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

std::vector<int> instance_mask(const std::vector<double>& deviations,
                               double delta) {
  if (delta <= 0.0 || delta > 1.0) {
    throw ConfigError("instance_mask: delta must lie in (0, 1]");
  }
  const int n = static_cast<int>(deviations.size());
  if (n == 0) return {};
  const int keep = std::max(
      1, static_cast<int>(std::floor(delta * static_cast<double>(n))));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return deviations[static_cast<std::size_t>(a)] < deviations[static_cast<std::size_t>(b)];
  });
  std::vector<int> mask(static_cast<std::size_t>(n), 0);
  for (int r = 0; r < keep; ++r) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = 1;
  return mask;
}

Tensor instance_attention_loss(const Tensor& deviations,
                               const std::vector<int>& mask) {
  if (deviations.empty() && mask.empty()) return Tensor::scalar(0.0);
  if (deviations.rank() != 1 ||
      deviations.size() != mask.size()) {
    throw DimensionError("instance_attention_loss: " +
                         std::to_string(deviations.size()) + " deviations vs " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::vector<double> m(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) m[i] = static_cast<double>(mask[i]);
  Tensor mask_t({static_cast<int>(mask.size())}, std::move(m));
  return sum_all(hadamard(mask_t, deviations));
}

Tensor total_loss(const Tensor& l_ia, const Tensor& r_lra, double lambda) {
  if (lambda < 0.0) throw ConfigError("total_loss: lambda must be >= 0");
  return add(l_ia, scale(r_lra, lambda));
}

}  // namespace mancount
