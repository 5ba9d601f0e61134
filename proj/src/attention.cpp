#include "mancount/attention.hpp"

#include <cmath>

#include "mancount/pgm.hpp"
#include "mancount/tape.hpp"

namespace mancount {

namespace {

void require_tokens(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected [WH x d] tokens, got " +
                         shape_str(t.shape()));
  }
}

void require_square(const Tensor& m, int d, const char* name) {
  if (m.rank() != 2 || m.extent(0) != d || m.extent(1) != d) {
    throw DimensionError(std::string(name) + " must be " + std::to_string(d) +
                         "x" + std::to_string(d) + ", got " + shape_str(m.shape()));
  }
}

void check_params(const AttentionParams& p) {
  require_square(p.wq_glb, p.d, "wq_glb");
  require_square(p.wk_glb, p.d, "wk_glb");
  require_square(p.wq_cov1, p.d, "wq_cov1");
  require_square(p.wk_cov1, p.d, "wk_cov1");
  require_square(p.wq_cov2, p.d, "wq_cov2");
  require_square(p.wk_cov2, p.d, "wk_cov2");
  require_square(p.wq_loc, p.d, "wq_loc");
  require_square(p.wk_loc, p.d, "wk_loc");
  require_square(p.wv, p.d, "wv");
}

Tensor scaled_logits(const Tensor& q, const Tensor& k, const Tensor& wq,
                     const Tensor& wk) {
  return matmul(matmul(q, wq), transpose(matmul(k, wk)));
}

}  // namespace

Tensor hard_region_map(GridPoint b, GridPoint u, int w, int h) {
  auto in_grid = [&](GridPoint p) {
    return p.x >= 0 && p.x < w && p.y >= 0 && p.y < h;
  };
  if (!in_grid(b) || !in_grid(u)) {
    throw BoundsError("hard_region_map: vertex outside the " + std::to_string(w) +
                      "x" + std::to_string(h) + " grid");
  }
  Tensor r({h, w});
  for (int y = b.y; y <= u.y; ++y)
    for (int x = b.x; x <= u.x; ++x) r.at(y, x) = 1.0;
  return r;
}

CoverageMaps coverage_maps(const Tensor& q, const Tensor& k,
                           const AttentionParams& params) {
  require_tokens(q, "coverage_maps");
  require_tokens(k, "coverage_maps");
  check_params(params);
  if (q.extent(1) != params.d || k.extent(1) != params.d ||
      q.extent(0) != k.extent(0)) {
    throw DimensionError("coverage_maps: Q " + shape_str(q.shape()) + " and K " +
                         shape_str(k.shape()) + " do not match d=" +
                         std::to_string(params.d));
  }
  CoverageMaps cov;
  cov.c1 = softmax_rows(scaled_logits(q, k, params.wq_cov1, params.wk_cov1));
  cov.c2 = softmax_rows(scaled_logits(q, k, params.wq_cov2, params.wk_cov2));
  return cov;
}

RegionMaps learnable_region_maps(const CoverageMaps& cov, int w, int h,
                                 bool keep_cdfs) {
  const Tensor& c1 = cov.c1;
  const Tensor& c2 = cov.c2;
  if (c1.rank() != 2 || c1.shape() != c2.shape()) {
    throw DimensionError("learnable_region_maps: coverage maps must be equal rank-2");
  }
  const int rows = c1.extent(0);
  const int wh = c1.extent(1);
  if (wh != w * h) {
    throw DimensionError("learnable_region_maps: coverage columns " +
                         std::to_string(wh) + " do not tile a " + std::to_string(w) +
                         "x" + std::to_string(h) + " grid");
  }
  // row i of a WH-column matrix is already the {h, w} grid of query i:
  // both are indexed by y*w + x
  const std::size_t stride = static_cast<std::size_t>(wh);
  std::vector<double> out(static_cast<std::size_t>(rows) * wh);
  std::vector<double> bl1(stride), ur1(stride), bl2(stride), ur2(stride);
  RegionMaps maps;
  maps.grid_h = h;
  maps.grid_w = w;
  if (keep_cdfs) {
    maps.cdf_bl_c1 = Tensor({rows, wh});
    maps.cdf_ur_c1 = Tensor({rows, wh});
    maps.cdf_bl_c2 = Tensor({rows, wh});
    maps.cdf_ur_c2 = Tensor({rows, wh});
  }
  for (int i = 0; i < rows; ++i) {
    const double* r1 = c1.data() + i * stride;
    const double* r2 = c2.data() + i * stride;
    std::copy(r1, r1 + stride, bl1.data());
    std::copy(r1, r1 + stride, ur1.data());
    std::copy(r2, r2 + stride, bl2.data());
    std::copy(r2, r2 + stride, ur2.data());
    cumsum2d_inplace(bl1.data(), h, w, CdfDir::BottomLeft);
    cumsum2d_inplace(ur1.data(), h, w, CdfDir::UpperRight);
    cumsum2d_inplace(bl2.data(), h, w, CdfDir::BottomLeft);
    cumsum2d_inplace(ur2.data(), h, w, CdfDir::UpperRight);
    double* oi = out.data() + i * stride;
    for (std::size_t p = 0; p < stride; ++p) {
      oi[p] = bl1[p] * ur2[p] + ur1[p] * bl2[p];
    }
    if (keep_cdfs) {
      std::copy(bl1.begin(), bl1.end(), maps.cdf_bl_c1.data() + i * stride);
      std::copy(ur1.begin(), ur1.end(), maps.cdf_ur_c1.data() + i * stride);
      std::copy(bl2.begin(), bl2.end(), maps.cdf_bl_c2.data() + i * stride);
      std::copy(ur2.begin(), ur2.end(), maps.cdf_ur_c2.data() + i * stride);
    }
  }
  Tape* tape = joint_tape({&c1, &c2});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [c1, c2, rows, w, h, stride](Tape& t,
                                            const std::vector<double>& g) {
      std::vector<double>* d1 = c1.tracked() ? &t.grad_buf(c1.node()) : nullptr;
      std::vector<double>* d2 = c2.tracked() ? &t.grad_buf(c2.node()) : nullptr;
      std::vector<double> bl1(stride), ur1(stride), bl2(stride), ur2(stride);
      std::vector<double> tmp(stride);
      for (int i = 0; i < rows; ++i) {
        const double* r1 = c1.data() + i * stride;
        const double* r2 = c2.data() + i * stride;
        const double* gi = g.data() + i * stride;
        std::copy(r1, r1 + stride, bl1.data());
        std::copy(r1, r1 + stride, ur1.data());
        std::copy(r2, r2 + stride, bl2.data());
        std::copy(r2, r2 + stride, ur2.data());
        cumsum2d_inplace(bl1.data(), h, w, CdfDir::BottomLeft);
        cumsum2d_inplace(ur1.data(), h, w, CdfDir::UpperRight);
        cumsum2d_inplace(bl2.data(), h, w, CdfDir::BottomLeft);
        cumsum2d_inplace(ur2.data(), h, w, CdfDir::UpperRight);
        if (d1) {
          double* dst = d1->data() + i * stride;
          // d bl(C1) = g o ur(C2); adjoint of bl is ur
          for (std::size_t p = 0; p < stride; ++p) tmp[p] = gi[p] * ur2[p];
          cumsum2d_inplace(tmp.data(), h, w, CdfDir::UpperRight);
          for (std::size_t p = 0; p < stride; ++p) dst[p] += tmp[p];
          // d ur(C1) = g o bl(C2); adjoint of ur is bl
          for (std::size_t p = 0; p < stride; ++p) tmp[p] = gi[p] * bl2[p];
          cumsum2d_inplace(tmp.data(), h, w, CdfDir::BottomLeft);
          for (std::size_t p = 0; p < stride; ++p) dst[p] += tmp[p];
        }
        if (d2) {
          double* dst = d2->data() + i * stride;
          for (std::size_t p = 0; p < stride; ++p) tmp[p] = gi[p] * bl1[p];
          cumsum2d_inplace(tmp.data(), h, w, CdfDir::BottomLeft);
          for (std::size_t p = 0; p < stride; ++p) dst[p] += tmp[p];
          for (std::size_t p = 0; p < stride; ++p) tmp[p] = gi[p] * ur1[p];
          cumsum2d_inplace(tmp.data(), h, w, CdfDir::UpperRight);
          for (std::size_t p = 0; p < stride; ++p) dst[p] += tmp[p];
        }
      }
    };
  }
  if (tape) {
    maps.rtilde = tape->record({rows, wh}, std::move(out),
                               {node_of(c1), node_of(c2)}, std::move(backward));
  } else {
    maps.rtilde = Tensor({rows, wh}, std::move(out));
  }
  detail::check_finite(maps.rtilde, "learnable_region_maps");
  return maps;
}

Tensor attention_lra(const Tensor& q, const Tensor& k, const Tensor& v,
                     const AttentionParams& params, const RegionMaps& regions) {
  require_tokens(q, "attention_lra");
  const int wh = q.extent(0);
  if (regions.rtilde.rank() != 2 || regions.rtilde.extent(0) != wh ||
      regions.rtilde.extent(1) != wh) {
    throw DimensionError("attention_lra: region maps " +
                         shape_str(regions.rtilde.shape()) + " do not match WH=" +
                         std::to_string(wh));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.d));
  Tensor logits = scaled_logits(q, k, params.wq_loc, params.wk_loc);
  Tensor gated = scale(hadamard(logits, regions.rtilde), inv_sqrt_d);
  return matmul(softmax_rows(gated), matmul(v, params.wv));
}

Tensor attention_global(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionParams& params) {
  require_tokens(q, "attention_global");
  require_tokens(k, "attention_global");
  require_tokens(v, "attention_global");
  check_params(params);
  if (q.extent(1) != params.d || k.extent(1) != params.d ||
      v.extent(1) != params.d) {
    throw DimensionError("attention_global: token width does not match d=" +
                         std::to_string(params.d));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.d));
  Tensor logits = scale(scaled_logits(q, k, params.wq_glb, params.wk_glb), inv_sqrt_d);
  return matmul(softmax_rows(logits), matmul(v, params.wv));
}

Tensor attention_combined(const Tensor& q, const Tensor& k, const Tensor& v,
                          const AttentionParams& params,
                          const RegionMaps& regions) {
  return add(attention_global(q, k, v, params),
             attention_lra(q, k, v, params, regions));
}

void export_region_maps(const RegionMaps& regions,
                        const std::vector<GridPoint>& probes,
                        const std::string& prefix) {
  const int w = regions.grid_w, h = regions.grid_h;
  for (const GridPoint& p : probes) {
    if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) {
      throw BoundsError("export_region_maps: probe outside the grid");
    }
    const int i = p.y * w + p.x;
    Tensor grid({h, w});
    for (int j = 0; j < w * h; ++j) {
      // linear [0,2] -> [0,1]; write_pgm quantizes to [0,255]
      double val = regions.rtilde.at(i, j) * 0.5;
      grid[static_cast<std::size_t>(j)] = std::min(1.0, std::max(0.0, val));
    }
    write_pgm(prefix + "_x" + std::to_string(p.x) + "_y" + std::to_string(p.y) +
                  ".pgm",
              grid);
  }
}

}  // namespace mancount
