#include "mancount/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mancount {

namespace detail {

void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) {
    throw EvalError(std::string(op) + " produced a non-finite value");
  }
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace detail

namespace {

Tensor finish(Tape* tape, Shape shape, std::vector<double> data,
              std::vector<int> parents, Tape::BackwardFn backward,
              const char* op) {
  Tensor out = tape ? tape->record(std::move(shape), std::move(data),
                                   std::move(parents), std::move(backward))
                    : Tensor(std::move(shape), std::move(data));
  detail::check_finite(out, op);
  return out;
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + " tensor, got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void accumulate(std::vector<double>& dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// in-place bottom-left summed-area accumulation on an {H, W} buffer
void sat_bl(double* v, int h, int w) {
  for (int y = 0; y < h; ++y) {
    double* row = v + static_cast<std::size_t>(y) * w;
    for (int x = 1; x < w; ++x) row[x] += row[x - 1];
  }
  for (int y = 1; y < h; ++y) {
    double* row = v + static_cast<std::size_t>(y) * w;
    const double* prev = row - w;
    for (int x = 0; x < w; ++x) row[x] += prev[x];
  }
}

// the opposite corner: bl on the doubly-reversed buffer, reversed back
void sat_ur(double* v, int h, int w) {
  std::reverse(v, v + static_cast<std::size_t>(h) * w);
  sat_bl(v, h, w);
  std::reverse(v, v + static_cast<std::size_t>(h) * w);
}

}  // namespace

void cumsum2d_inplace(double* v, int h, int w, CdfDir dir) {
  if (dir == CdfDir::BottomLeft) {
    sat_bl(v, h, w);
  } else {
    sat_ur(v, h, w);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  {
    const double* pa = a.data();
    const double* pb = b.data();
    for (int i = 0; i < m; ++i) {
      double* po = out.data() + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double aik = pa[static_cast<std::size_t>(i) * k + kk];
        const double* pbk = pb + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) po[j] += aik * pbk[j];
      }
    }
  }
  Tape* tape = joint_tape({&a, &b});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [a, b, m, k, n](Tape& t, const std::vector<double>& g) {
      if (a.tracked()) {
        // dA = G * B^T
        auto& da = t.grad_buf(a.node());
        const double* pb = b.data();
        for (int i = 0; i < m; ++i) {
          const double* gi = g.data() + static_cast<std::size_t>(i) * n;
          double* dai = da.data() + static_cast<std::size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const double* pbk = pb + static_cast<std::size_t>(kk) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += gi[j] * pbk[j];
            dai[kk] += s;
          }
        }
      }
      if (b.tracked()) {
        // dB = A^T * G
        auto& db = t.grad_buf(b.node());
        const double* pa = a.data();
        for (int i = 0; i < m; ++i) {
          const double* gi = g.data() + static_cast<std::size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const double aik = pa[static_cast<std::size_t>(i) * k + kk];
            double* dbk = db.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) dbk[j] += aik * gi[j];
          }
        }
      }
    };
  }
  return finish(tape, {m, n}, std::move(out), {node_of(a), node_of(b)},
                std::move(backward), "matmul");
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.extent(0), n = a.extent(1);
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
  Tape* tape = joint_tape({&a});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [a, m, n](Tape& t, const std::vector<double>& g) {
      auto& da = t.grad_buf(a.node());
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i)
          da[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    };
  }
  return finish(tape, {n, m}, std::move(out), {node_of(a)}, std::move(backward),
                "transpose");
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const int m = x.extent(0), n = x.extent(1);
  std::vector<double> out(x.size());
  for (int i = 0; i < m; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * n;
    double* oi = out.data() + static_cast<std::size_t>(i) * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      z += oi[j];
    }
    for (int j = 0; j < n; ++j) oi[j] /= z;
  }
  Tape* tape = joint_tape({&x});
  Tape::BackwardFn backward;
  if (tape) {
    Tensor y({m, n}, out);  // saved activation
    backward = [x, y, m, n](Tape& t, const std::vector<double>& g) {
      auto& dx = t.grad_buf(x.node());
      for (int i = 0; i < m; ++i) {
        const double* yi = y.data() + static_cast<std::size_t>(i) * n;
        const double* gi = g.data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += gi[j] * yi[j];
        double* di = dx.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) di[j] += yi[j] * (gi[j] - dot);
      }
    };
  }
  return finish(tape, {m, n}, std::move(out), {node_of(x)}, std::move(backward),
                "softmax_rows");
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                      double eps) {
  require_rank(x, 2, "layernorm_rows");
  const int m = x.extent(0), n = x.extent(1);
  if (gain.rank() != 1 || gain.extent(0) != n || bias.rank() != 1 ||
      bias.extent(0) != n) {
    throw DimensionError("layernorm_rows: gain/bias must be length " +
                         std::to_string(n));
  }
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sd(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sd[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      xhat[idx] = (xi[j] - mu) * is;
      out[idx] = gain[static_cast<std::size_t>(j)] * xhat[idx] +
                 bias[static_cast<std::size_t>(j)];
    }
  }
  Tape* tape = joint_tape({&x, &gain, &bias});
  Tape::BackwardFn backward;
  if (tape) {
    Tensor xh({m, n}, xhat);
    Tensor isd({m}, inv_sd);
    backward = [x, gain, bias, xh, isd, m, n](Tape& t,
                                              const std::vector<double>& g) {
      for (int i = 0; i < m; ++i) {
        const double* gi = g.data() + static_cast<std::size_t>(i) * n;
        const double* xhi = xh.data() + static_cast<std::size_t>(i) * n;
        if (gain.tracked()) {
          auto& dg = t.grad_buf(gain.node());
          for (int j = 0; j < n; ++j) dg[static_cast<std::size_t>(j)] += gi[j] * xhi[j];
        }
        if (bias.tracked()) {
          auto& db = t.grad_buf(bias.node());
          for (int j = 0; j < n; ++j) db[static_cast<std::size_t>(j)] += gi[j];
        }
        if (x.tracked()) {
          auto& dx = t.grad_buf(x.node());
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxhat = gi[j] * gain[static_cast<std::size_t>(j)];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhi[j];
          }
          mean_dxhat /= n;
          mean_dxhat_xhat /= n;
          const double is = isd[static_cast<std::size_t>(i)];
          double* di = dx.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double dxhat = gi[j] * gain[static_cast<std::size_t>(j)];
            di[j] += is * (dxhat - mean_dxhat - xhi[j] * mean_dxhat_xhat);
          }
        }
      }
    };
  }
  return finish(tape, {m, n}, std::move(out),
                {node_of(x), node_of(gain), node_of(bias)}, std::move(backward),
                "layernorm_rows");
}

namespace {

Tensor binary_ewise(const Tensor& a, const Tensor& b, const char* op,
                    double (*fwd)(double, double),
                    void (*bwd)(double av, double bv, double g, double& da,
                                double& db)) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fwd(a[i], b[i]);
  Tape* tape = joint_tape({&a, &b});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [a, b, bwd](Tape& t, const std::vector<double>& g) {
      std::vector<double>* da = a.tracked() ? &t.grad_buf(a.node()) : nullptr;
      std::vector<double>* db = b.tracked() ? &t.grad_buf(b.node()) : nullptr;
      double dummy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double& ra = da ? (*da)[i] : dummy;
        double& rb = db ? (*db)[i] : dummy;
        bwd(a[i], b[i], g[i], ra, rb);
      }
    };
  }
  return finish(tape, a.shape(), std::move(out), {node_of(a), node_of(b)},
                std::move(backward), op);
}

Tensor unary_ewise(const Tensor& a, const char* op, double (*fwd)(double),
                   double (*dfdx)(double)) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fwd(a[i]);
  Tape* tape = joint_tape({&a});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [a, dfdx](Tape& t, const std::vector<double>& g) {
      auto& da = t.grad_buf(a.node());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * dfdx(a[i]);
    };
  }
  return finish(tape, a.shape(), std::move(out), {node_of(a)},
                std::move(backward), op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ewise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da += g;
        db += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ewise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da += g;
        db -= g;
      });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary_ewise(
      a, b, "hadamard", [](double x, double y) { return x * y; },
      [](double av, double bv, double g, double& da, double& db) {
        da += g * bv;
        db += g * av;
      });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  Tape* tape = joint_tape({&a});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [a, s](Tape& t, const std::vector<double>& g) {
      auto& da = t.grad_buf(a.node());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * s;
    };
  }
  return finish(tape, a.shape(), std::move(out), {node_of(a)},
                std::move(backward), "scale");
}

Tensor neg(const Tensor& a) {
  return unary_ewise(
      a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_ewise(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor abs_t(const Tensor& a) {
  return unary_ewise(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_ewise(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double x) { return 0.5 / std::max(std::sqrt(x), kEps); });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  require_rank(x, 2, "add_rowvec");
  const int m = x.extent(0), n = x.extent(1);
  if (b.rank() != 1 || b.extent(0) != n) {
    throw DimensionError("add_rowvec: vector must have length " + std::to_string(n) +
                         ", got " + shape_str(b.shape()));
  }
  std::vector<double> out(x.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = x.at(i, j) + b[static_cast<std::size_t>(j)];
  Tape* tape = joint_tape({&x, &b});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, b, m, n](Tape& t, const std::vector<double>& g) {
      if (x.tracked()) accumulate(t.grad_buf(x.node()), g.data(), g.size());
      if (b.tracked()) {
        auto& db = t.grad_buf(b.node());
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            db[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * n + j];
      }
    };
  }
  return finish(tape, x.shape(), std::move(out), {node_of(x), node_of(b)},
                std::move(backward), "add_rowvec");
}

Tensor add_chanvec(const Tensor& x, const Tensor& b) {
  require_rank(x, 3, "add_chanvec");
  const int c = x.extent(0);
  const std::size_t plane = static_cast<std::size_t>(x.extent(1)) * x.extent(2);
  if (b.rank() != 1 || b.extent(0) != c) {
    throw DimensionError("add_chanvec: vector must have length " + std::to_string(c) +
                         ", got " + shape_str(b.shape()));
  }
  std::vector<double> out(x.size());
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i)
      out[static_cast<std::size_t>(ch) * plane + i] =
          x[static_cast<std::size_t>(ch) * plane + i] + b[static_cast<std::size_t>(ch)];
  Tape* tape = joint_tape({&x, &b});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, b, c, plane](Tape& t, const std::vector<double>& g) {
      if (x.tracked()) accumulate(t.grad_buf(x.node()), g.data(), g.size());
      if (b.tracked()) {
        auto& db = t.grad_buf(b.node());
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i)
            s += g[static_cast<std::size_t>(ch) * plane + i];
          db[static_cast<std::size_t>(ch)] += s;
        }
      }
    };
  }
  return finish(tape, x.shape(), std::move(out), {node_of(x), node_of(b)},
                std::move(backward), "add_chanvec");
}

Tensor cumsum2d(const Tensor& c, CdfDir dir) {
  if (c.rank() != 2) {
    throw DimensionError("cumsum2d: expected a 2D tensor, got " +
                         shape_str(c.shape()));
  }
  const int h = c.extent(0), w = c.extent(1);
  std::vector<double> out(c.data(), c.data() + c.size());
  cumsum2d_inplace(out.data(), h, w, dir);
  Tape* tape = joint_tape({&c});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [c, h, w, dir](Tape& t, const std::vector<double>& g) {
      // adjoint of one direction is the cumsum in the opposite direction
      std::vector<double> gg(g);
      cumsum2d_inplace(gg.data(), h, w,
          dir == CdfDir::BottomLeft ? CdfDir::UpperRight : CdfDir::BottomLeft);
      accumulate(t.grad_buf(c.node()), gg.data(), gg.size());
    };
  }
  return finish(tape, c.shape(), std::move(out), {node_of(c)},
                std::move(backward), "cumsum2d");
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const int cin = x.extent(0), h = x.extent(1), ww = x.extent(2);
  const int cout = w.extent(0), k = w.extent(2);
  if (w.extent(1) != cin) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(w.extent(1)) +
                         " input channels, tensor has " + std::to_string(cin));
  }
  if (w.extent(3) != k) {
    throw DimensionError("conv2d: kernel must be square, got " +
                         shape_str(w.shape()));
  }
  if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
  if ((h + 2 * pad - k) % stride != 0 || (ww + 2 * pad - k) % stride != 0) {
    throw ConfigError("conv2d: output extent is not integral for input " +
                      shape_str(x.shape()) + ", k=" + std::to_string(k) +
                      ", stride=" + std::to_string(stride) +
                      ", pad=" + std::to_string(pad));
  }
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (ww + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow, 0.0);
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= ww) continue;
              s += x.at(ci, iy, ix) *
                   w[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = s;
      }
    }
  }
  Tape* tape = joint_tape({&x, &w});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, w, stride, pad, cin, h, ww, cout, k, oh,
                ow](Tape& t, const std::vector<double>& g) {
      std::vector<double>* dx = x.tracked() ? &t.grad_buf(x.node()) : nullptr;
      std::vector<double>* dw = w.tracked() ? &t.grad_buf(w.node()) : nullptr;
      for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double go = g[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
            if (go == 0.0) continue;
            for (int ci = 0; ci < cin; ++ci) {
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= ww) continue;
                  const std::size_t xi =
                      (static_cast<std::size_t>(ci) * h + iy) * ww + ix;
                  const std::size_t wi =
                      ((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx;
                  if (dx) (*dx)[xi] += go * w[wi];
                  if (dw) (*dw)[wi] += go * x[xi];
                }
              }
            }
          }
        }
      }
    };
  }
  return finish(tape, {cout, oh, ow}, std::move(out), {node_of(x), node_of(w)},
                std::move(backward), "conv2d");
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 3, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int oh = h * factor, ow = w * factor;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        out[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] =
            x.at(ch, oy / factor, ox / factor);
  Tape* tape = joint_tape({&x});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, factor, c, h, w, oh, ow](Tape& t,
                                            const std::vector<double>& g) {
      auto& dx = t.grad_buf(x.node());
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox)
            dx[(static_cast<std::size_t>(ch) * h + oy / factor) * w + ox / factor] +=
                g[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox];
    };
  }
  return finish(tape, {c, oh, ow}, std::move(out), {node_of(x)},
                std::move(backward), "upsample_nearest");
}

Tensor avgpool2(const Tensor& x) {
  require_rank(x, 3, "avgpool2");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("avgpool2: extents must be even, got " + shape_str(x.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        out[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] =
            0.25 * (x.at(ch, 2 * oy, 2 * ox) + x.at(ch, 2 * oy, 2 * ox + 1) +
                    x.at(ch, 2 * oy + 1, 2 * ox) + x.at(ch, 2 * oy + 1, 2 * ox + 1));
  Tape* tape = joint_tape({&x});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, c, h, w, oh, ow](Tape& t, const std::vector<double>& g) {
      auto& dx = t.grad_buf(x.node());
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const double gq = 0.25 * g[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox];
            dx[(static_cast<std::size_t>(ch) * h + 2 * oy) * w + 2 * ox] += gq;
            dx[(static_cast<std::size_t>(ch) * h + 2 * oy) * w + 2 * ox + 1] += gq;
            dx[(static_cast<std::size_t>(ch) * h + 2 * oy + 1) * w + 2 * ox] += gq;
            dx[(static_cast<std::size_t>(ch) * h + 2 * oy + 1) * w + 2 * ox + 1] += gq;
          }
    };
  }
  return finish(tape, {c, oh, ow}, std::move(out), {node_of(x)},
                std::move(backward), "avgpool2");
}

Tensor tokens_from_features(const Tensor& f) {
  require_rank(f, 3, "tokens_from_features");
  const int c = f.extent(0);
  const int hw = f.extent(1) * f.extent(2);
  std::vector<double> out(f.size());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i)
      out[static_cast<std::size_t>(i) * c + ch] =
          f[static_cast<std::size_t>(ch) * hw + i];
  Tape* tape = joint_tape({&f});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [f, c, hw](Tape& t, const std::vector<double>& g) {
      auto& df = t.grad_buf(f.node());
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i)
          df[static_cast<std::size_t>(ch) * hw + i] +=
              g[static_cast<std::size_t>(i) * c + ch];
    };
  }
  return finish(tape, {hw, c}, std::move(out), {node_of(f)},
                std::move(backward), "tokens_from_features");
}

Tensor features_from_tokens(const Tensor& x, int h, int w) {
  require_rank(x, 2, "features_from_tokens");
  const int hw = x.extent(0), c = x.extent(1);
  if (hw != h * w) {
    throw DimensionError("features_from_tokens: " + std::to_string(hw) +
                         " tokens do not tile a " + std::to_string(w) + "x" +
                         std::to_string(h) + " grid");
  }
  std::vector<double> out(x.size());
  for (int i = 0; i < hw; ++i)
    for (int ch = 0; ch < c; ++ch)
      out[static_cast<std::size_t>(ch) * hw + i] =
          x[static_cast<std::size_t>(i) * c + ch];
  Tape* tape = joint_tape({&x});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, c, hw](Tape& t, const std::vector<double>& g) {
      auto& dx = t.grad_buf(x.node());
      for (int i = 0; i < hw; ++i)
        for (int ch = 0; ch < c; ++ch)
          dx[static_cast<std::size_t>(i) * c + ch] +=
              g[static_cast<std::size_t>(ch) * hw + i];
    };
  }
  return finish(tape, {c, h, w}, std::move(out), {node_of(x)},
                std::move(backward), "features_from_tokens");
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Tape* tape = joint_tape({&x});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x](Tape& t, const std::vector<double>& g) {
      auto& dx = t.grad_buf(x.node());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
    };
  }
  return finish(tape, {1}, {s}, {node_of(x)}, std::move(backward), "sum_all");
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const int m = x.extent(0), n = x.extent(1);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] += x.at(i, j);
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] /= m;
  Tape* tape = joint_tape({&x});
  Tape::BackwardFn backward;
  if (tape) {
    backward = [x, m, n](Tape& t, const std::vector<double>& g) {
      auto& dx = t.grad_buf(x.node());
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          dx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j)] / m;
    };
  }
  return finish(tape, {n}, std::move(out), {node_of(x)}, std::move(backward),
                "mean_rows");
}

Tensor reshape(const Tensor& x, Shape shape) {
  // pure metadata change; a tracked tensor keeps its node, so gradients
  // flow through untouched
  return x.reshaped(std::move(shape));
}

Tensor concat_scalars(const std::vector<Tensor>& xs) {
  std::vector<double> out(xs.size());
  std::vector<int> parents(xs.size(), -1);
  Tape* tape = nullptr;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != 1) {
      throw DimensionError("concat_scalars: element " + std::to_string(i) +
                           " is not scalar");
    }
    out[i] = xs[i][0];
    parents[i] = node_of(xs[i]);
    if (xs[i].tracked()) {
      if (tape && tape != xs[i].tape()) {
        throw ContractError("concat_scalars: operands on different tapes");
      }
      tape = xs[i].tape();
    }
  }
  Tape::BackwardFn backward;
  if (tape) {
    std::vector<int> ps = parents;
    backward = [ps](Tape& t, const std::vector<double>& g) {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i] >= 0) t.grad_buf(ps[i])[0] += g[i];
      }
    };
  }
  const int n = static_cast<int>(xs.size());
  return finish(tape, {n}, std::move(out), std::move(parents),
                std::move(backward), "concat_scalars");
}

double finite_diff_check(const TensorFn& f, const Tensor& x, double h) {
  Tensor base = x.clone();
  Tape tape;
  Tensor xt = tape.leaf(base);
  Tensor y = f(xt);
  if (y.size() != 1) {
    throw ContractError("finite_diff_check: objective must be scalar");
  }
  if (!std::isfinite(y.value())) {
    throw EvalError("finite_diff_check: objective is non-finite at x");
  }
  Tensor analytic;
  if (y.tracked()) {
    tape.backward(y);
    analytic = tape.grad(xt);
  } else {
    analytic = Tensor::zeros(x.shape());  // objective ignored the probe
  }
  Tensor probe = x.clone();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe).value();
    probe[i] = orig - h;
    const double fm = f(probe).value();
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvalError("finite_diff_check: objective is non-finite near x");
    }
    const double central = (fp - fm) / (2.0 * h);
    const double rel =
        std::fabs(analytic[i] - central) / std::max(1.0, std::fabs(central));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace mancount
