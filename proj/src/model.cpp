#include "mancount/model.hpp"

#include <cmath>

#include "mancount/ops.hpp"
#include "mancount/rng.hpp"

namespace mancount {

void ModelConfig::validate() const {
  if (dim < 4 || dim % 4 != 0) {
    throw ConfigError("model dim must be a positive multiple of 4, got " +
                      std::to_string(dim));
  }
  if (layers < 1) throw ConfigError("encoder needs at least one layer");
  if (ffn_hidden < 0) throw ConfigError("ffn_hidden must be >= 0");
  if (backbone_c1 < 1 || backbone_c2 < 1) {
    throw ConfigError("backbone channel plan must be positive");
  }
}

namespace {

constexpr int kBackboneStride = 8;
constexpr int kDecoderUpsample = 2;
constexpr int kDensityStride = kBackboneStride / kDecoderUpsample;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor square_init(int d, Rng& rng) {
  return uniform_tensor({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
}

Tensor conv_init(int cout, int cin, int k, Rng& rng) {
  return uniform_tensor({cout, cin, k, k},
                        1.0 / std::sqrt(static_cast<double>(cin) * k * k), rng);
}

}  // namespace

void ModelParams::for_each(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    const std::string base = "backbone.conv" + std::to_string(i + 1);
    fn(base + ".w", backbone[i].w);
    fn(base + ".b", backbone[i].b);
  }
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string base = "encoder." + std::to_string(l);
    EncoderLayerParams& lp = encoder[l];
    fn(base + ".att.wq_glb", lp.att.wq_glb);
    fn(base + ".att.wk_glb", lp.att.wk_glb);
    fn(base + ".att.wq_cov1", lp.att.wq_cov1);
    fn(base + ".att.wk_cov1", lp.att.wk_cov1);
    fn(base + ".att.wq_cov2", lp.att.wq_cov2);
    fn(base + ".att.wk_cov2", lp.att.wk_cov2);
    fn(base + ".att.wq_loc", lp.att.wq_loc);
    fn(base + ".att.wk_loc", lp.att.wk_loc);
    fn(base + ".att.wv", lp.att.wv);
    fn(base + ".ln1.gain", lp.ln1_gain);
    fn(base + ".ln1.bias", lp.ln1_bias);
    fn(base + ".ffn.w1", lp.ffn_w1);
    fn(base + ".ffn.b1", lp.ffn_b1);
    fn(base + ".ffn.w2", lp.ffn_w2);
    fn(base + ".ffn.b2", lp.ffn_b2);
    fn(base + ".ln2.gain", lp.ln2_gain);
    fn(base + ".ln2.bias", lp.ln2_bias);
  }
  fn("decoder.conv1.w", dec1.w);
  fn("decoder.conv1.b", dec1.b);
  fn("decoder.conv2.w", dec2.w);
  fn("decoder.conv2.b", dec2.b);
  fn("decoder.conv3.w", dec3.w);
  fn("decoder.conv3.b", dec3.b);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  auto& self = const_cast<ModelParams&>(*this);
  self.for_each([&](const std::string& name, Tensor& t) {
    fn(name, static_cast<const Tensor&>(t));
  });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams ModelParams::tracked(Tape& tape) const {
  ModelParams out = *this;  // shallow copies of every tensor
  out.for_each([&](const std::string&, Tensor& t) { t = tape.leaf(t); });
  return out;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  const int d = config.dim;
  Rng rng(seed);

  p.backbone[0].w = conv_init(config.backbone_c1, 1, 3, rng);
  p.backbone[0].b = Tensor::zeros({config.backbone_c1});
  p.backbone[1].w = conv_init(config.backbone_c2, config.backbone_c1, 3, rng);
  p.backbone[1].b = Tensor::zeros({config.backbone_c2});
  p.backbone[2].w = conv_init(d, config.backbone_c2, 3, rng);
  p.backbone[2].b = Tensor::zeros({d});

  p.encoder.resize(static_cast<std::size_t>(config.layers));
  for (EncoderLayerParams& lp : p.encoder) {
    lp.att.d = d;
    lp.att.wq_glb = square_init(d, rng);
    lp.att.wk_glb = square_init(d, rng);
    lp.att.wq_cov1 = square_init(d, rng);
    lp.att.wk_cov1 = square_init(d, rng);
    lp.att.wq_cov2 = square_init(d, rng);
    lp.att.wk_cov2 = square_init(d, rng);
    lp.att.wq_loc = square_init(d, rng);
    lp.att.wk_loc = square_init(d, rng);
    lp.att.wv = square_init(d, rng);
    lp.ln1_gain = Tensor::ones({d});
    lp.ln1_bias = Tensor::zeros({d});
    lp.ffn_w1 = uniform_tensor({d, config.ffn()},
                               1.0 / std::sqrt(static_cast<double>(d)), rng);
    lp.ffn_b1 = Tensor::zeros({config.ffn()});
    lp.ffn_w2 = uniform_tensor({config.ffn(), d},
                               1.0 / std::sqrt(static_cast<double>(config.ffn())), rng);
    lp.ffn_b2 = Tensor::zeros({d});
    lp.ln2_gain = Tensor::ones({d});
    lp.ln2_bias = Tensor::zeros({d});
  }

  p.dec1.w = conv_init(d / 2, d, 3, rng);
  p.dec1.b = Tensor::zeros({d / 2});
  p.dec2.w = conv_init(d / 4, d / 2, 3, rng);
  p.dec2.b = Tensor::zeros({d / 4});
  p.dec3.w = conv_init(1, d / 4, 1, rng);
  p.dec3.b = Tensor::zeros({1});
  return p;
}

Tensor backbone_forward(const Tensor& image, const ModelParams& params) {
  if (image.rank() != 3 || image.extent(0) != 1) {
    throw DimensionError("backbone_forward: expected a {1, H, W} image, got " +
                         shape_str(image.shape()));
  }
  const int h = image.extent(1), w = image.extent(2);
  if (h % kBackboneStride != 0 || w % kBackboneStride != 0) {
    throw ConfigError("backbone_forward: extents " + std::to_string(w) + "x" +
                      std::to_string(h) + " must be divisible by " +
                      std::to_string(kBackboneStride));
  }
  Tensor x = image;
  for (const ConvBlockParams& block : params.backbone) {
    x = avgpool2(relu(add_chanvec(conv2d(x, block.w, 1, 1), block.b)));
  }
  return x;
}

std::pair<Tensor, RegionMaps> encoder_layer_forward(
    const Tensor& x, const EncoderLayerParams& layer, const ModelConfig& config,
    int grid_h, int grid_w) {
  RegionMaps regions;
  Tensor att_out;
  if (config.use_lra) {
    CoverageMaps cov = coverage_maps(x, x, layer.att);
    regions = learnable_region_maps(cov, grid_w, grid_h);
    att_out = attention_combined(x, x, x, layer.att, regions);
  } else {
    att_out = attention_global(x, x, x, layer.att);
  }
  Tensor y1 = layernorm_rows(add(x, att_out), layer.ln1_gain, layer.ln1_bias);
  Tensor hidden = relu(add_rowvec(matmul(y1, layer.ffn_w1), layer.ffn_b1));
  Tensor ffn_out = add_rowvec(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
  Tensor y = layernorm_rows(add(y1, ffn_out), layer.ln2_gain, layer.ln2_bias);
  return {y, std::move(regions)};
}

DensityMap decoder_forward(const Tensor& features, const ModelParams& params) {
  Tensor x = upsample_nearest(features, kDecoderUpsample);
  x = relu(add_chanvec(conv2d(x, params.dec1.w, 1, 1), params.dec1.b));
  x = relu(add_chanvec(conv2d(x, params.dec2.w, 1, 1), params.dec2.b));
  x = relu(add_chanvec(conv2d(x, params.dec3.w, 1, 0), params.dec3.b));
  DensityMap density;
  density.grid = reshape(x, {x.extent(1), x.extent(2)});
  density.stride = kDensityStride;
  return density;
}

ForwardResult model_forward(const Tensor& image, const ModelParams& params) {
  ForwardResult result;
  result.features = backbone_forward(image, params);
  const int grid_h = result.features.extent(1);
  const int grid_w = result.features.extent(2);
  Tensor x = tokens_from_features(result.features);
  result.regions.reserve(params.encoder.size());
  for (const EncoderLayerParams& layer : params.encoder) {
    auto [y, regions] = encoder_layer_forward(x, layer, params.config, grid_h, grid_w);
    x = y;
    if (params.config.use_lra) result.regions.push_back(std::move(regions));
  }
  Tensor refined = features_from_tokens(x, grid_h, grid_w);
  result.density = decoder_forward(refined, params);
  return result;
}

ModelSummary summarize(const ModelConfig& config, int win, int hin) {
  config.validate();
  if (win % kBackboneStride != 0 || hin % kBackboneStride != 0) {
    throw ConfigError("summarize: extents must be divisible by " +
                      std::to_string(kBackboneStride));
  }
  ModelSummary s;
  ModelParams p = init_params(config, 0);
  s.parameters = p.parameter_count();

  auto conv_flops = [](std::size_t cout, std::size_t cin, std::size_t k,
                       std::size_t oh, std::size_t ow) {
    return 2 * cout * oh * ow * cin * k * k;
  };
  auto matmul_flops = [](std::size_t m, std::size_t k, std::size_t n) {
    return 2 * m * k * n;
  };

  const std::size_t d = static_cast<std::size_t>(config.dim);
  const std::size_t c1 = static_cast<std::size_t>(config.backbone_c1);
  const std::size_t c2 = static_cast<std::size_t>(config.backbone_c2);
  std::size_t h = static_cast<std::size_t>(hin), w = static_cast<std::size_t>(win);
  s.flops += conv_flops(c1, 1, 3, h, w);
  h /= 2; w /= 2;
  s.flops += conv_flops(c2, c1, 3, h, w);
  h /= 2; w /= 2;
  s.flops += conv_flops(d, c2, 3, h, w);
  h /= 2; w /= 2;

  const std::size_t wh = h * w;
  const std::size_t projections = config.use_lra ? 9 : 3;
  const std::size_t logit_products = config.use_lra ? 4 : 1;  // glb, loc, cov1, cov2
  const std::size_t value_products = config.use_lra ? 2 : 1;  // per branch
  std::size_t per_layer = projections * matmul_flops(wh, d, d) +
                          logit_products * matmul_flops(wh, d, wh) +
                          value_products * matmul_flops(wh, wh, d) +
                          matmul_flops(wh, d, static_cast<std::size_t>(config.ffn())) +
                          matmul_flops(wh, static_cast<std::size_t>(config.ffn()), d);
  s.flops += per_layer * static_cast<std::size_t>(config.layers);

  h *= kDecoderUpsample;
  w *= kDecoderUpsample;
  s.flops += conv_flops(d / 2, d, 3, h, w);
  s.flops += conv_flops(d / 4, d / 2, 3, h, w);
  s.flops += conv_flops(1, d / 4, 1, h, w);
  return s;
}

}  // namespace mancount
