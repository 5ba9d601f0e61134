#pragma once

#include <functional>

#include "mancount/tape.hpp"
#include "mancount/tensor.hpp"

namespace mancount {

/// Direction of a 2D cumulative sum over a grid stored as {H, W}:
/// BottomLeft accumulates over x' <= x, y' <= y (summed-area table from
/// the origin); UpperRight accumulates over x' >= x, y' >= y.
enum class CdfDir { BottomLeft, UpperRight };

inline constexpr double kEps = 1e-12;

// ---- dense linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);

/// Per-row layer norm with learnable gain/bias: one (mean, variance)
/// pair per row of x[M x N]; gain and bias have length N.
Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);   // subgradient 0 at 0
Tensor abs_t(const Tensor& a);  // subgradient 0 at 0
Tensor sqrt_t(const Tensor& a);

/// x[M x N] + b[N] broadcast over rows (the one sanctioned broadcast,
/// as an explicit op).
Tensor add_rowvec(const Tensor& x, const Tensor& b);

/// x[C x H x W] + b[C] broadcast over each channel plane.
Tensor add_chanvec(const Tensor& x, const Tensor& b);

// ---- spatial ----

/// O(WH) summed-area evaluation of the directional 2D CDF; gradient of
/// the BottomLeft direction is the UpperRight cumsum of the upstream
/// gradient and vice versa.
Tensor cumsum2d(const Tensor& c, CdfDir dir);

/// Cross-correlation: x[Cin x H x W], w[Cout x Cin x k x k], odd k.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);

Tensor upsample_nearest(const Tensor& x, int factor);

/// 2x2 mean-pool downsample of x[C x H x W]; H and W must be even.
Tensor avgpool2(const Tensor& x);

/// In-place directional summed-area pass over an {H, W} buffer.
void cumsum2d_inplace(double* v, int h, int w, CdfDir dir);

/// {C, H, W} features -> {H*W, C} token matrix; token i = y*W + x.
Tensor tokens_from_features(const Tensor& f);
Tensor features_from_tokens(const Tensor& x, int h, int w);

// ---- reductions / glue ----

Tensor sum_all(const Tensor& x);  // scalar

/// Column means of x[M x N] -> [N].
Tensor mean_rows(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// Stacks N scalar tensors into one [N] tensor.
Tensor concat_scalars(const std::vector<Tensor>& xs);

// ---- gradient checking ----

using TensorFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| /
/// max(1, |central difference|), with the analytic gradient taken from
/// one tape backward of f at x and the differences from untracked
/// evaluations at x +- h e_i.
double finite_diff_check(const TensorFn& f, const Tensor& x, double h = 1e-5);

namespace detail {
void check_finite(const Tensor& t, const char* op);
}

}  // namespace mancount
