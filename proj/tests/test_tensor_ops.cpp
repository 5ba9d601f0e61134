#include <doctest.h>

#include <cmath>

#include "mancount/ops.hpp"
#include "mancount/rng.hpp"
#include "mancount/tape.hpp"
#include "oracles.hpp"

using namespace mancount;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({3}, {1.0, 2.0, 3.0}).value(), ContractError);
  CHECK(Tensor::scalar(4.5).value() == 4.5);
}

TEST_CASE("matmul identity and hand expansion") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == m[i]);

  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  CHECK(matmul(a, b).value() == 11.0);

  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("matmul gradient vs central differences") {
  Rng rng(42);
  Tensor a = oracle::random_tensor({5, 4}, rng);
  Tensor b = oracle::random_tensor({4, 3}, rng);
  const double err_a =
      finite_diff_check([&](const Tensor& x) { return sum_all(matmul(x, b)); }, a);
  const double err_b =
      finite_diff_check([&](const Tensor& x) { return sum_all(matmul(a, x)); }, b);
  CHECK(err_a < 1e-6);
  CHECK(err_b < 1e-6);
}

TEST_CASE("softmax rows: symmetry, single element, shift invariance") {
  Tensor z({1, 3}, {0, 0, 0});
  Tensor s = softmax_rows(z);
  for (int j = 0; j < 3; ++j) CHECK(s.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  CHECK(softmax_rows(Tensor({1, 1}, {7.5})).value() == 1.0);

  Rng rng(7);
  Tensor x = oracle::random_tensor({4, 6}, rng);
  Tensor shifted = x.clone();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) shifted.at(i, j) += 1000.0;
  Tensor sx = softmax_rows(x);
  Tensor ss = softmax_rows(shifted);
  CHECK(oracle::max_abs_diff(sx, ss) < 1e-12);

  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 6; ++j) {
      CHECK(sx.at(i, j) >= 0.0);
      CHECK(sx.at(i, j) <= 1.0);
      row += sx.at(i, j);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("cumsum2d trivial examples") {
  // uniform 2x2, bottom-left CDF of the uniform distribution
  Tensor u({2, 2}, {0.25, 0.25, 0.25, 0.25});
  Tensor bl = cumsum2d(u, CdfDir::BottomLeft);
  CHECK(bl.at(0, 0) == doctest::Approx(0.25));
  CHECK(bl.at(0, 1) == doctest::Approx(0.5));   // (x=1, y=0)
  CHECK(bl.at(1, 0) == doctest::Approx(0.5));   // (x=0, y=1)
  CHECK(bl.at(1, 1) == doctest::Approx(1.0));

  // point mass at (x=1, y=1) on 3x3: indicator of {x >= 1 and y >= 1}
  Tensor delta({3, 3});
  delta.at(1, 1) = 1.0;
  Tensor d = cumsum2d(delta, CdfDir::BottomLeft);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      CHECK(d.at(y, x) == (x >= 1 && y >= 1 ? 1.0 : 0.0));

  CHECK_THROWS_AS(cumsum2d(Tensor({2, 2, 2}), CdfDir::BottomLeft), DimensionError);
}

TEST_CASE("cumsum2d equals the brute-force oracle and keeps its invariants") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor c = oracle::random_tensor({8, 8}, rng, 0.0, 1.0);
    Tensor fast_bl = cumsum2d(c, CdfDir::BottomLeft);
    Tensor fast_ur = cumsum2d(c, CdfDir::UpperRight);
    CHECK(oracle::max_abs_diff(fast_bl, oracle::cumsum2d_naive(c, true)) < 1e-12);
    CHECK(oracle::max_abs_diff(fast_ur, oracle::cumsum2d_naive(c, false)) < 1e-12);

    const double total = c.sum();
    CHECK(fast_bl.at(7, 7) == doctest::Approx(total).epsilon(1e-12));
    CHECK(fast_ur.at(0, 0) == doctest::Approx(total).epsilon(1e-12));

    // monotone for nonnegative input: bl nondecreasing in +x and +y
    for (int y = 0; y < 8; ++y) {
      for (int x = 1; x < 8; ++x) {
        CHECK(fast_bl.at(y, x) >= fast_bl.at(y, x - 1));
        CHECK(fast_ur.at(y, x) <= fast_ur.at(y, x - 1));
      }
    }
    for (int x = 0; x < 8; ++x) {
      for (int y = 1; y < 8; ++y) {
        CHECK(fast_bl.at(y, x) >= fast_bl.at(y - 1, x));
        CHECK(fast_ur.at(y, x) <= fast_ur.at(y - 1, x));
      }
    }
  }
}

TEST_CASE("cumsum2d gradient duality") {
  Rng rng(13);
  Tensor c = oracle::random_tensor({5, 6}, rng);
  Tensor w = oracle::random_tensor({5, 6}, rng);
  // weighted sum through the bl CDF: gradient must be ur-cumsum of w
  Tape tape;
  Tensor ct = tape.leaf(c);
  Tensor loss = sum_all(hadamard(w, cumsum2d(ct, CdfDir::BottomLeft)));
  tape.backward(loss);
  Tensor grad = tape.grad(ct);
  Tensor expected = cumsum2d(w, CdfDir::UpperRight);
  CHECK(oracle::max_abs_diff(grad, expected) < 1e-12);

  const double fd = finite_diff_check(
      [&](const Tensor& x) {
        return sum_all(hadamard(w, cumsum2d(x, CdfDir::BottomLeft)));
      },
      c);
  CHECK(fd < 1e-9);
}

TEST_CASE("elementwise kinds: definitions") {
  Tensor a({3}, {1, 2, 3});
  Tensor b({3}, {4, 5, 6});
  Tensor h = hadamard(a, b);
  CHECK(h[0] == 4.0);
  CHECK(h[1] == 10.0);
  CHECK(h[2] == 18.0);

  Tensor r = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  CHECK_THROWS_AS(add(a, Tensor({2}, {1, 2})), DimensionError);
}

TEST_CASE("elementwise kinds: gradcheck") {
  Rng rng(17);
  Tensor a = oracle::random_tensor({3, 3}, rng, 0.3, 1.3);
  Tensor b = oracle::random_tensor({3, 3}, rng, 0.3, 1.3);
  auto fd = [&](const TensorFn& f, const Tensor& x) {
    return finite_diff_check(f, x);
  };
  CHECK(fd([&](const Tensor& x) { return sum_all(add(x, b)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(sub(x, b)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(hadamard(x, x)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(scale(x, 2.5)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(neg(x)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(relu(x)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(abs_t(x)); }, a) < 1e-6);
  CHECK(fd([&](const Tensor& x) { return sum_all(sqrt_t(x)); }, a) < 1e-6);
}

TEST_CASE("conv2d examples") {
  // 1x1 kernel of value 2 scales a 3x3 plane
  Tensor ones3({1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor k1({1, 1, 1, 1}, {2.0});
  Tensor scaled = conv2d(ones3, k1, 1, 0);
  for (std::size_t i = 0; i < scaled.size(); ++i) CHECK(scaled[i] == 2.0);

  // 3x3 ones kernel over a padded 4x4 of ones counts the overlap
  Tensor ones4({1, 4, 4}, std::vector<double>(16, 1.0));
  Tensor k3({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor counted = conv2d(ones4, k3, 1, 1);
  CHECK(counted.at(0, 1, 1) == 9.0);
  CHECK(counted.at(0, 2, 2) == 9.0);
  CHECK(counted.at(0, 0, 0) == 4.0);
  CHECK(counted.at(0, 0, 3) == 4.0);
  CHECK(counted.at(0, 3, 3) == 4.0);

  CHECK_THROWS_AS(conv2d(ones4, Tensor({1, 1, 2, 2}), 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(ones4, k3, 2, 1), ConfigError);  // (4+2-3)/2 not integral
  CHECK_THROWS_AS(conv2d(ones4, Tensor({1, 2, 3, 3}), 1, 1), DimensionError);
}

TEST_CASE("conv2d gradcheck") {
  Rng rng(19);
  Tensor x = oracle::random_tensor({2, 5, 5}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  const double ex = finite_diff_check(
      [&](const Tensor& t) { return sum_all(conv2d(t, w, 1, 1)); }, x);
  const double ew = finite_diff_check(
      [&](const Tensor& t) { return sum_all(conv2d(x, t, 1, 1)); }, w);
  CHECK(ex < 1e-5);
  CHECK(ew < 1e-5);
}

TEST_CASE("upsample_nearest examples and conservation") {
  Tensor x({1, 1, 1}, {5.0});
  Tensor up = upsample_nearest(x, 2);
  CHECK(up.shape() == Shape{1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(up[i] == 5.0);

  Rng rng(23);
  Tensor y = oracle::random_tensor({2, 3, 4}, rng);
  CHECK(oracle::max_abs_diff(upsample_nearest(y, 1), y) == 0.0);
  Tensor up3 = upsample_nearest(y, 3);
  CHECK(up3.sum() == doctest::Approx(9.0 * y.sum()).epsilon(1e-12));
  CHECK_THROWS_AS(upsample_nearest(y, 0), ConfigError);
}

TEST_CASE("avgpool2 halves extents and inverts upsample means") {
  Rng rng(29);
  Tensor y = oracle::random_tensor({2, 4, 6}, rng);
  Tensor pooled = avgpool2(y);
  CHECK(pooled.shape() == Shape{2, 2, 3});
  CHECK(oracle::max_abs_diff(avgpool2(upsample_nearest(y, 2)), y) < 1e-12);
  CHECK_THROWS_AS(avgpool2(Tensor({1, 3, 4})), ConfigError);
}

TEST_CASE("backward: linear and quadratic leaves") {
  Rng rng(31);
  Tensor x = oracle::random_tensor({4, 3}, rng);
  {
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor loss = sum_all(xt);
    tape.backward(loss);
    Tensor g = tape.grad(xt);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
  }
  {
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor loss = scale(sum_all(hadamard(xt, xt)), 0.5);
    tape.backward(loss);
    Tensor g = tape.grad(xt);
    CHECK(oracle::max_abs_diff(g, x) < 1e-12);
  }
  {
    Tape tape;
    Tensor xt = tape.leaf(x);
    CHECK_THROWS_AS(tape.backward(add(xt, xt)), ContractError);  // non-scalar
  }
}

TEST_CASE("backward is deterministic bit for bit") {
  auto run = [] {
    Rng rng(37);
    Tensor x = oracle::random_tensor({6, 6}, rng);
    Tape tape;
    Tensor xt = tape.leaf(x);
    Tensor y = softmax_rows(matmul(xt, transpose(xt)));
    Tensor loss = sum_all(hadamard(y, cumsum2d(xt, CdfDir::BottomLeft)));
    tape.backward(loss);
    return tape.grad(xt);
  };
  Tensor g1 = run();
  Tensor g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("mixing tapes is rejected") {
  Tape t1, t2;
  Tensor a = t1.leaf(Tensor({2}, {1, 2}));
  Tensor b = t2.leaf(Tensor({2}, {3, 4}));
  CHECK_THROWS_AS(add(a, b), ContractError);
}

TEST_CASE("finite_diff_check contract") {
  Rng rng(41);
  Tensor x = oracle::random_tensor({3, 3}, rng);
  // sum of squares has a well-known gradient
  CHECK(finite_diff_check(
            [](const Tensor& t) { return sum_all(hadamard(t, t)); }, x) < 1e-9);
  // softmax then first-column sum
  CHECK(finite_diff_check(
            [](const Tensor& t) {
              Tensor s = softmax_rows(t);
              Tensor w = Tensor::zeros(s.shape());
              for (int i = 0; i < s.extent(0); ++i) w.at(i, 0) = 1.0;
              return sum_all(hadamard(w, s));
            },
            x) < 1e-6);
  // a deliberately corrupted gradient is flagged
  const double bad = finite_diff_check(
      [](const Tensor& t) {
        Tensor correct = sum_all(t);
        if (!t.tracked()) return correct;
        return t.tape()->record({1}, {correct.value()}, {t.node()},
                                [t](Tape& tp, const std::vector<double>& g) {
                                  auto& dx = tp.grad_buf(t.node());
                                  for (auto& v : dx) v += 0.9 * g[0];  // wrong on purpose
                                });
      },
      x);
  CHECK(bad > 1e-2);
  // NaN objectives raise
  CHECK_THROWS_AS(
      finite_diff_check([](const Tensor&) { return Tensor::scalar(std::nan("")); }, x),
      EvalError);
}

TEST_CASE("tokens/features round trip and layout") {
  Rng rng(43);
  Tensor f = oracle::random_tensor({3, 2, 4}, rng);
  Tensor tokens = tokens_from_features(f);
  CHECK(tokens.shape() == Shape{8, 3});
  // token i = y*W + x carries the channel column of that position
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 4; ++x)
        CHECK(tokens.at(y * 4 + x, c) == f.at(c, y, x));
  CHECK(oracle::max_abs_diff(features_from_tokens(tokens, 2, 4), f) == 0.0);
}

TEST_SUITE_END();
