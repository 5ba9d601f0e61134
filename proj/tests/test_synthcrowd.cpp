#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mancount/pgm.hpp"
#include "mancount/synthcrowd.hpp"
#include "oracles.hpp"

using namespace mancount;
namespace fs = std::filesystem;

namespace {

SceneParams small_params() {
  SceneParams p;
  p.size = 32;
  p.count_min = 2;
  p.count_max = 6;
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("synthcrowd");

TEST_CASE("scene generation is bit-deterministic under its seed") {
  const SceneParams params = small_params();
  CrowdScene a = generate_scene(params, 99);
  CrowdScene b = generate_scene(params, 99);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].x == b.points[i].x);
    CHECK(a.points[i].y == b.points[i].y);
  }
  for (std::size_t i = 0; i < a.image.size(); ++i) CHECK(a.image[i] == b.image[i]);

  CrowdScene c = generate_scene(params, 100);
  bool any_diff = c.points.size() != a.points.size();
  for (std::size_t i = 0; !any_diff && i < a.image.size(); ++i) {
    any_diff = a.image[i] != c.image[i];
  }
  CHECK(any_diff);
}

TEST_CASE("count contract and empty scenes") {
  SceneParams p = small_params();
  p.count_min = p.count_max = 7;
  CHECK(generate_scene(p, 3).points.size() == 7);

  p.count_min = p.count_max = 0;
  CrowdScene empty = generate_scene(p, 3);
  CHECK(empty.points.empty());
  // noise-only image stays within range
  for (std::size_t i = 0; i < empty.image.size(); ++i) {
    CHECK(empty.image[i] >= 0.0);
    CHECK(empty.image[i] <= 1.0);
  }
}

TEST_CASE("annotations stay inside the image; pixels stay in [0,1]") {
  SceneParams p = small_params();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CrowdScene s = generate_scene(p, seed);
    CHECK(s.points.size() >= 2);
    CHECK(s.points.size() <= 6);
    for (const Point& pt : s.points) {
      CHECK(pt.x >= 0.0);
      CHECK(pt.x < p.size);
      CHECK(pt.y >= 0.0);
      CHECK(pt.y < p.size);
    }
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      CHECK(s.image[i] >= 0.0);
      CHECK(s.image[i] <= 1.0);
    }
  }
}

TEST_CASE("perspective contract: blob radius grows monotonically with y") {
  const SceneParams p = small_params();
  double prev = 0.0;
  for (int y = 0; y < p.size; ++y) {
    const double r = p.radius_at(y);
    CHECK(r > prev);
    prev = r;
  }
  // an isolated blob lower in the frame spreads wider: compare the
  // rendered mass of single-head scenes pinned at the top and bottom
  SceneParams one = p;
  one.count_min = one.count_max = 1;
  one.noise_level = 0.0;
  double top_mass = 0.0, bottom_mass = 0.0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    CrowdScene s = generate_scene(one, seed);
    const double mass = s.image.sum();
    if (s.points[0].y < one.size * 0.3) top_mass = std::max(top_mass, mass);
    if (s.points[0].y > one.size * 0.7) bottom_mass = std::max(bottom_mass, mass);
  }
  CHECK(bottom_mass > top_mass);
}

TEST_CASE("packing bound and parameter validation") {
  SceneParams p = small_params();
  p.count_max = 65;  // 32*32/16 = 64
  CHECK_THROWS_AS(generate_scene(p, 1), ConfigError);
  p = small_params();
  p.head_radius = 0.0;
  CHECK_THROWS_AS(generate_scene(p, 1), ConfigError);
  p = small_params();
  p.count_min = 5;
  p.count_max = 4;
  CHECK_THROWS_AS(generate_scene(p, 1), ConfigError);
}

TEST_CASE("dataset round trip: points lossless, image equal after one quantization") {
  const fs::path dir = fs::temp_directory_path() / "mancount_ds_roundtrip";
  fs::remove_all(dir);
  SceneParams p = small_params();
  std::vector<CrowdScene> scenes;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    scenes.push_back(generate_scene(p, seed));
  }
  write_dataset(scenes, dir.string());
  std::vector<CrowdScene> loaded = read_dataset(dir.string());
  REQUIRE(loaded.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    REQUIRE(loaded[i].points.size() == scenes[i].points.size());
    for (std::size_t j = 0; j < scenes[i].points.size(); ++j) {
      CHECK(loaded[i].points[j].x == scenes[i].points[j].x);
      CHECK(loaded[i].points[j].y == scenes[i].points[j].y);
    }
    for (std::size_t k = 0; k < scenes[i].image.size(); ++k) {
      const double quantized = std::lround(scenes[i].image[k] * 255.0) / 255.0;
      CHECK(loaded[i].image[k] == quantized);
    }
  }
  // a second write/read cycle is lossless
  const fs::path dir2 = fs::temp_directory_path() / "mancount_ds_roundtrip2";
  fs::remove_all(dir2);
  write_dataset(loaded, dir2.string());
  std::vector<CrowdScene> again = read_dataset(dir2.string());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    for (std::size_t k = 0; k < loaded[i].image.size(); ++k) {
      CHECK(again[i].image[k] == loaded[i].image[k]);
    }
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("empty dataset round trips through an empty manifest") {
  const fs::path dir = fs::temp_directory_path() / "mancount_ds_empty";
  fs::remove_all(dir);
  write_dataset({}, dir.string());
  CHECK(read_dataset(dir.string()).empty());
  fs::remove_all(dir);
}

TEST_CASE("parse errors name the file and offset") {
  const fs::path dir = fs::temp_directory_path() / "mancount_ds_errors";
  fs::remove_all(dir);
  fs::create_directories(dir);

  {
    std::ofstream manifest(dir / "manifest.txt");
    manifest << "img/none.pgm ann/none.csv\n";
  }
  CHECK_THROWS_AS(read_dataset(dir.string()), ParseError);

  {
    std::ofstream bad(dir / "bad.pgm", std::ios::binary);
    bad << "P6\n2 2\n255\n....";
  }
  CHECK_THROWS_WITH_AS(read_pgm((dir / "bad.pgm").string()),
                       doctest::Contains("bad magic"), ParseError);

  {
    std::ofstream trunc(dir / "trunc.pgm", std::ios::binary);
    trunc << "P5\n4 4\n255\nab";  // raster cut short
  }
  CHECK_THROWS_WITH_AS(read_pgm((dir / "trunc.pgm").string()),
                       doctest::Contains("truncated"), ParseError);

  {
    std::ofstream csv(dir / "bad.csv");
    csv << "1.5,2.5\nnot-a-number,3\n";
    std::ofstream img(dir / "ok.pgm", std::ios::binary);
    img << "P5\n1 1\n255\nx";
    std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
    manifest << "ok.pgm bad.csv\n";
  }
  CHECK_THROWS_AS(read_dataset(dir.string()), ParseError);

  fs::remove_all(dir);
}

TEST_SUITE_END();
