#include <doctest.h>

#include <cmath>

#include "mancount/losses.hpp"
#include "mancount/ops.hpp"
#include "mancount/rng.hpp"
#include "mancount/tape.hpp"
#include "oracles.hpp"

using namespace mancount;

TEST_SUITE_BEGIN("losses");

TEST_CASE("posterior: single annotation is 1 everywhere") {
  PosteriorMap post = posterior_map({{10.0, 12.0}}, 4, 4, 4.0, 8.0);
  CHECK(post.n == 1);
  for (std::size_t i = 0; i < post.prob.size(); ++i) CHECK(post.prob[i] == 1.0);
}

TEST_CASE("posterior: symmetric pair splits evenly at the midpoint cell") {
  // grid 4x4, stride 4: cell (1,1) center = (6, 6)
  PosteriorMap post = posterior_map({{4.0, 6.0}, {8.0, 6.0}}, 4, 4, 4.0, 8.0);
  const int cell = 1 * 4 + 1;
  CHECK(post.prob.at(0, cell) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(post.prob.at(1, cell) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("posterior: columns over annotations sum to 1 at every cell") {
  Rng rng(301);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point> pts;
    for (int j = 0; j < 5; ++j) {
      pts.push_back({rng.uniform(0.0, 32.0), rng.uniform(0.0, 32.0)});
    }
    PosteriorMap post = posterior_map(pts, 8, 8, 4.0, 8.0);
    for (int p = 0; p < 64; ++p) {
      double col = 0.0;
      for (int j = 0; j < 5; ++j) {
        CHECK(post.prob.at(j, p) >= 0.0);
        col += post.prob.at(j, p);
      }
      CHECK(col == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(posterior_map({{1.0, 1.0}}, 4, 4, 4.0, 0.0), ConfigError);
  CHECK(posterior_map({}, 4, 4, 4.0, 8.0).n == 0);
}

TEST_CASE("instance deviations: empty prediction and exact N=1 cases") {
  PosteriorMap post = posterior_map({{3.0, 3.0}, {9.0, 9.0}}, 4, 4, 4.0, 8.0);
  Tensor zero_density({4, 4});
  Tensor e0 = instance_deviations(post, zero_density);
  CHECK(e0.size() == 2);
  CHECK(e0[0] == 1.0);
  CHECK(e0[1] == 1.0);

  PosteriorMap single = posterior_map({{5.0, 5.0}}, 4, 4, 4.0, 8.0);
  Tensor unit({4, 4});
  unit.at(0, 0) = 0.25;
  unit.at(1, 1) = 0.75;
  Tensor e1 = instance_deviations(single, unit);
  CHECK(e1[0] == doctest::Approx(0.0).epsilon(1e-15));
  Tensor bigger({4, 4});
  bigger.at(2, 2) = 1.5;
  CHECK(instance_deviations(single, bigger)[0] == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(instance_deviations(post, Tensor({3, 4})), DimensionError);
}

TEST_CASE("instance deviations: N=1 deviation equals |1 - sum(D)| bitwise") {
  Rng rng(303);
  PosteriorMap single = posterior_map({{7.0, 2.0}}, 6, 5, 4.0, 8.0);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor d = oracle::random_tensor({6, 5}, rng, 0.0, 0.2);
    const double eps = instance_deviations(single, d)[0];
    CHECK(eps == std::fabs(1.0 - sum_all(d).value()));
  }
}

TEST_CASE("instance deviations gradcheck w.r.t. the density map") {
  Rng rng(307);
  std::vector<Point> pts = {{3.0, 5.0}, {10.0, 9.0}, {13.0, 2.0}};
  PosteriorMap post = posterior_map(pts, 4, 4, 4.0, 8.0);
  Tensor probe = oracle::random_tensor({3}, rng);
  const double err = finite_diff_check(
      [&](const Tensor& d) {
        return sum_all(hadamard(probe, instance_deviations(post, d)));
      },
      oracle::random_tensor({4, 4}, rng, 0.0, 0.4));
  CHECK(err < 1e-5);
}

TEST_CASE("instance mask: delta=1 keeps everything") {
  const std::vector<double> e = {0.4, 0.2, 0.9};
  const std::vector<int> m = instance_mask(e, 1.0);
  CHECK(m == std::vector<int>{1, 1, 1});
}

TEST_CASE("instance mask: drops the largest deviations") {
  const std::vector<double> e = {0.5, 0.1, 0.9, 0.2, 0.3};
  const std::vector<int> m = instance_mask(e, 0.9);  // K = floor(4.5) = 4
  CHECK(m == std::vector<int>{1, 1, 0, 1, 1});
}

TEST_CASE("instance mask: stable ties keep the lower indices") {
  const std::vector<double> e = {0.7, 0.7, 0.7, 0.7};
  const std::vector<int> m = instance_mask(e, 0.5);  // K = 2
  CHECK(m == std::vector<int>{1, 1, 0, 0});
}

TEST_CASE("instance mask: cardinality, rescale invariance, edge cases") {
  Rng rng(311);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(12));
    std::vector<double> e;
    for (int j = 0; j < n; ++j) e.push_back(rng.uniform(0.0, 2.0));
    const double delta = rng.uniform(0.05, 1.0);
    const std::vector<int> m = instance_mask(e, delta);
    int kept = 0;
    for (int v : m) kept += v;
    CHECK(kept == std::max(1, static_cast<int>(std::floor(delta * n))));
    // every kept deviation <= every dropped deviation
    double max_kept = -1.0, min_dropped = 3.0;
    for (int j = 0; j < n; ++j) {
      if (m[static_cast<std::size_t>(j)]) {
        max_kept = std::max(max_kept, e[static_cast<std::size_t>(j)]);
      } else {
        min_dropped = std::min(min_dropped, e[static_cast<std::size_t>(j)]);
      }
    }
    if (kept < n) CHECK(max_kept <= min_dropped);
    // positive rescaling leaves the mask unchanged
    std::vector<double> scaled = e;
    const double s = rng.uniform(0.1, 7.0);
    for (double& v : scaled) v *= s;
    CHECK(instance_mask(scaled, delta) == m);
  }
  CHECK(instance_mask({}, 0.9).empty());
  CHECK_THROWS_AS(instance_mask({0.1}, 0.0), ConfigError);
  CHECK_THROWS_AS(instance_mask({0.1}, 1.5), ConfigError);
}

TEST_CASE("instance attention loss: sums, empty mask, monotone in the mask") {
  Tensor e({2}, {0.2, 0.3});
  CHECK(instance_attention_loss(e, {1, 1}).value() == doctest::Approx(0.5));
  CHECK(instance_attention_loss(e, {0, 0}).value() == 0.0);
  CHECK_THROWS_AS(instance_attention_loss(e, {1}), DimensionError);
  CHECK(instance_attention_loss(Tensor(), {}).value() == 0.0);

  Rng rng(313);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(10));
    Tensor dev({n});
    for (int j = 0; j < n; ++j) dev[static_cast<std::size_t>(j)] = rng.uniform(0.0, 1.5);
    const std::vector<double> values = to_values(dev);
    const double partial =
        instance_attention_loss(dev, instance_mask(values, 0.9)).value();
    const double full =
        instance_attention_loss(dev, instance_mask(values, 1.0)).value();
    CHECK(partial <= full + 1e-15);
    // delta = 1 must equal the plain unmasked sum bitwise
    CHECK(full == sum_all(dev).value());
  }
}

TEST_CASE("total loss combines the two terms") {
  Tensor ia = Tensor::scalar(0.5);
  Tensor lra = Tensor::scalar(0.01);
  CHECK(total_loss(ia, lra, 0.0).value() == 0.5);
  CHECK(total_loss(ia, lra, 100.0).value() == doctest::Approx(1.5).epsilon(1e-15));
  CHECK_THROWS_AS(total_loss(ia, lra, -1.0), ConfigError);

  Rng rng(317);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = Tensor::scalar(rng.uniform(0.0, 3.0));
    Tensor b = Tensor::scalar(rng.uniform(0.0, 3.0));
    CHECK(total_loss(a, b, rng.uniform(0.0, 200.0)).value() >= 0.0);
  }
}

TEST_SUITE_END();
