#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mancount/attention.hpp"
#include "mancount/tape.hpp"
#include "mancount/tensor.hpp"

namespace mancount {

struct ModelConfig {
  int dim = 64;         // encoder width d; must be divisible by 4
  int layers = 4;       // encoder depth T
  int ffn_hidden = 0;   // 0 means 2 * dim
  int backbone_c1 = 16;
  int backbone_c2 = 32;
  bool use_lra = true;  // combined attention; false = global-only encoder

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 2 * dim; }
  void validate() const;
};

/// Predicted density over a W' x H' grid; the sum of the grid is the
/// predicted count. `stride` is input pixels per density cell.
struct DensityMap {
  Tensor grid;  // {H', W'}, nonnegative
  int stride = 4;
  double count() const { return grid.sum(); }
};

struct ConvBlockParams {
  Tensor w;  // {Cout, Cin, k, k}
  Tensor b;  // {Cout}
};

struct EncoderLayerParams {
  AttentionParams att;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;
};

struct ModelParams {
  ModelConfig config;
  std::array<ConvBlockParams, 3> backbone;
  std::vector<EncoderLayerParams> encoder;
  ConvBlockParams dec1, dec2, dec3;

  /// Visits every parameter tensor in the canonical (checkpoint) order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  std::size_t parameter_count() const;

  /// Copy whose tensors are tape leaves sharing these buffers.
  ModelParams tracked(Tape& tape) const;
};

/// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero,
/// layer-norm gains one; draw order is the canonical parameter order.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

struct ForwardResult {
  DensityMap density;
  std::vector<RegionMaps> regions;  // one per layer when use_lra is on
  Tensor features;                  // backbone output {d, H/8, W/8}
};

/// Three conv(k=3,s=1,p=1)+relu blocks, each followed by a 2x2 mean
/// downsample: {1, H, W} -> {d, H/8, W/8}. H and W must be divisible
/// by 8.
Tensor backbone_forward(const Tensor& image, const ModelParams& params);

/// Post-norm encoder layer: y1 = LN(x + Att(x)), y = LN(y1 + FFN(y1)).
/// Returns the layer's region maps (empty when use_lra is off).
std::pair<Tensor, RegionMaps> encoder_layer_forward(
    const Tensor& x, const EncoderLayerParams& layer, const ModelConfig& config,
    int grid_h, int grid_w);

/// upsample x2, conv3x3+relu (d -> d/2), conv3x3+relu (d/2 -> d/4),
/// conv1x1+relu (-> 1); density stride 4 relative to the input.
DensityMap decoder_forward(const Tensor& features, const ModelParams& params);

ForwardResult model_forward(const Tensor& image, const ModelParams& params);

struct ModelSummary {
  std::size_t parameters = 0;
  std::size_t flops = 0;  // 2*MACs of every matmul/conv in one forward
};

/// Exact parameter count and dense-kernel FLOPs for one forward pass on
/// a Win x Hin input. FLOPs count 2*M*K*N per matmul and
/// 2*Cout*H'*W'*Cin*k^2 per conv; elementwise/pool/softmax work is
/// excluded.
ModelSummary summarize(const ModelConfig& config, int win, int hin);

}  // namespace mancount
