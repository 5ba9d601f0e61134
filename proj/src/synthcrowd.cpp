#include "mancount/synthcrowd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mancount/pgm.hpp"
#include "mancount/rng.hpp"

namespace fs = std::filesystem;

namespace mancount {

void SceneParams::validate() const {
  if (size < 8) throw ConfigError("scene size must be at least 8 pixels");
  if (count_min < 0 || count_max < count_min) {
    throw ConfigError("invalid count range [" + std::to_string(count_min) + ", " +
                      std::to_string(count_max) + "]");
  }
  const int packing_bound = (size * size) / 16;
  if (count_max > packing_bound) {
    throw ConfigError("count_max " + std::to_string(count_max) +
                      " exceeds the packing bound " + std::to_string(packing_bound) +
                      " for a " + std::to_string(size) + "x" + std::to_string(size) +
                      " image");
  }
  if (head_radius <= 0.0) throw ConfigError("head_radius must be positive");
  // radius must stay positive across the whole frame
  if (radius_at(0.0) <= 0.0 || radius_at(size - 1.0) <= 0.0) {
    throw ConfigError("perspective slope makes the head radius non-positive in-frame");
  }
  if (blob_amplitude < 0.0 || noise_level < 0.0) {
    throw ConfigError("blob_amplitude and noise_level must be >= 0");
  }
}

namespace {

// y quantile of the pdf proportional to 1/(1 + s*y/H): far rows (small
// radius) are denser, matching the perspective argument
double sample_row(double u, double h, double slope) {
  if (slope < 1e-9) return h * u;
  return h * (std::pow(1.0 + slope, u) - 1.0) / slope;
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

CrowdScene generate_scene(const SceneParams& params, std::uint64_t seed) {
  params.validate();
  CrowdScene scene;
  scene.seed = seed;
  const int s = params.size;
  scene.image = Tensor({s, s});
  Rng rng(seed);

  const int span = params.count_max - params.count_min + 1;
  const int count = params.count_min +
                    static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span)));
  scene.points.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    const double y = sample_row(rng.uniform(), s, params.perspective_slope);
    const double x = rng.uniform() * s;
    scene.points.push_back({x, y});
  }

  for (const Point& p : scene.points) {
    const double r = params.radius_at(p.y);
    const double inv_two_r2 = 1.0 / (2.0 * r * r);
    const int reach = static_cast<int>(std::ceil(4.0 * r));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.y)) - reach);
    const int y1 = std::min(s - 1, static_cast<int>(std::ceil(p.y)) + reach);
    const int x0 = std::max(0, static_cast<int>(std::floor(p.x)) - reach);
    const int x1 = std::min(s - 1, static_cast<int>(std::ceil(p.x)) + reach);
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double dx = px - p.x;
        const double dy = py - p.y;
        scene.image.at(py, px) +=
            params.blob_amplitude * std::exp(-(dx * dx + dy * dy) * inv_two_r2);
      }
    }
  }

  for (std::size_t i = 0; i < scene.image.size(); ++i) {
    scene.image[i] += params.noise_level * rng.uniform();
    scene.image[i] = std::min(1.0, std::max(0.0, scene.image[i]));
  }
  return scene;
}

void write_dataset(const std::vector<CrowdScene>& scenes, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "img");
  fs::create_directories(fs::path(dir) / "ann");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot open " + dir + "/manifest.txt for writing");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string name = index_name(i);
    const std::string img_rel = "img/" + name + ".pgm";
    const std::string ann_rel = "ann/" + name + ".csv";
    write_pgm((fs::path(dir) / img_rel).string(), scenes[i].image);
    std::ofstream csv(fs::path(dir) / ann_rel);
    if (!csv) throw IoError("cannot open " + dir + "/" + ann_rel + " for writing");
    for (const Point& p : scenes[i].points) {
      csv << format_double(p.x) << "," << format_double(p.y) << "\n";
    }
    if (!csv) throw IoError("failed writing " + dir + "/" + ann_rel);
    manifest << img_rel << " " << ann_rel << "\n";
  }
  if (!manifest) throw IoError("failed writing " + dir + "/manifest.txt");
}

namespace {

std::vector<Point> read_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": offset 0: cannot open file");
  std::vector<Point> points;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw ParseError(path + ": offset " + std::to_string(line_start) +
                       ": expected \"x,y\"");
    }
    char* end = nullptr;
    const std::string xs = line.substr(0, comma);
    const std::string ys = line.substr(comma + 1);
    const double x = std::strtod(xs.c_str(), &end);
    if (end == xs.c_str() || *end != '\0') {
      throw ParseError(path + ": offset " + std::to_string(line_start) +
                       ": bad x coordinate \"" + xs + "\"");
    }
    const double y = std::strtod(ys.c_str(), &end);
    if (end == ys.c_str() || (*end != '\0' && *end != '\r')) {
      throw ParseError(path + ": offset " + std::to_string(line_start + comma + 1) +
                       ": bad y coordinate \"" + ys + "\"");
    }
    points.push_back({x, y});
  }
  return points;
}

}  // namespace

std::vector<CrowdScene> read_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw ParseError(manifest_path + ": offset 0: cannot open file");
  std::vector<CrowdScene> scenes;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(manifest, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const std::size_t space = line.find(' ');
    if (space == std::string::npos) {
      throw ParseError(manifest_path + ": offset " + std::to_string(line_start) +
                       ": expected \"<image> <annotations>\"");
    }
    const std::string img_rel = line.substr(0, space);
    std::string ann_rel = line.substr(space + 1);
    if (!ann_rel.empty() && ann_rel.back() == '\r') ann_rel.pop_back();
    const std::string img_path = (fs::path(dir) / img_rel).string();
    const std::string ann_path = (fs::path(dir) / ann_rel).string();
    CrowdScene scene;
    scene.image = read_pgm(img_path);
    scene.points = read_annotations(ann_path);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace mancount
