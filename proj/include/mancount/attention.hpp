#pragma once

#include <string>
#include <vector>

#include "mancount/ops.hpp"
#include "mancount/tensor.hpp"

namespace mancount {

struct GridPoint {
  int x = 0;
  int y = 0;
};

/// The nine d x d projection matrices of one attention block: the
/// global branch (wq_glb, wk_glb), the two coverage-map projections
/// that parameterize the learnable regions (wq_cov1/wk_cov1,
/// wq_cov2/wk_cov2), the local branch (wq_loc, wk_loc), and the value
/// projection wv shared by both branches.
struct AttentionParams {
  int d = 0;
  Tensor wq_glb, wk_glb;
  Tensor wq_cov1, wk_cov1;
  Tensor wq_cov2, wk_cov2;
  Tensor wq_loc, wk_loc;
  Tensor wv;
};

/// Two row-stochastic WH x WH coverage probability maps; row i is a
/// probability distribution over the W x H grid for query location i.
struct CoverageMaps {
  Tensor c1, c2;
};

/// Complete region maps: row i of rtilde is the W x H map flattened by
/// the token order (index y*W + x). Values lie in [0, 2]. The four
/// directional CDF stacks are kept (untracked) when requested.
struct RegionMaps {
  Tensor rtilde;  // [WH x WH]
  int grid_h = 0;
  int grid_w = 0;
  Tensor cdf_bl_c1, cdf_ur_c1, cdf_bl_c2, cdf_ur_c2;  // optional
};

/// Binary rectangle mask: 1 where b.x <= x <= u.x and b.y <= y <= u.y,
/// all-zero when the rectangle is empty. Vertices must lie on the grid.
Tensor hard_region_map(GridPoint b, GridPoint u, int w, int h);

/// C1 = softmax_rows((Q W1q)(K W1k)^T), C2 likewise; no 1/sqrt(d)
/// scaling on the coverage logits.
CoverageMaps coverage_maps(const Tensor& q, const Tensor& k,
                           const AttentionParams& params);

/// Region maps from the coverage maps: for each query row i,
///   Rt_i = bl(C1_i) o ur(C2_i) + ur(C1_i) o bl(C2_i),
/// where bl/ur are the two directional 2D CDFs, each evaluated with an
/// O(WH) summed-area pass. Implemented as one fused differentiable op;
/// the adjoint swaps the CDF directions on the upstream gradient.
RegionMaps learnable_region_maps(const CoverageMaps& cov, int w, int h,
                                 bool keep_cdfs = false);

/// softmax_rows(((Q Wq_loc)(K Wk_loc)^T o Rt) / sqrt(d)) (V Wv):
/// the region map multiplies the pre-softmax logits.
Tensor attention_lra(const Tensor& q, const Tensor& k, const Tensor& v,
                     const AttentionParams& params, const RegionMaps& regions);

/// softmax_rows((Q Wq_glb)(K Wk_glb)^T / sqrt(d)) (V Wv).
Tensor attention_global(const Tensor& q, const Tensor& k, const Tensor& v,
                        const AttentionParams& params);

/// Sum of the global and learnable-region branches (single head).
Tensor attention_combined(const Tensor& q, const Tensor& k, const Tensor& v,
                          const AttentionParams& params,
                          const RegionMaps& regions);

/// Writes one PGM per probe location, named <prefix>_x<X>_y<Y>.pgm,
/// with region values linearly scaled from [0, 2] to [0, 255].
void export_region_maps(const RegionMaps& regions,
                        const std::vector<GridPoint>& probes,
                        const std::string& prefix);

}  // namespace mancount
