#include "mancount/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <tuple>

#include "mancount/adam.hpp"
#include "mancount/attention.hpp"
#include "mancount/checkpoint.hpp"
#include "mancount/lar.hpp"
#include "mancount/losses.hpp"
#include "mancount/ops.hpp"
#include "mancount/pgm.hpp"
#include "mancount/rng.hpp"

namespace fs = std::filesystem;

namespace mancount {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_grid_cap(int grid_h, int grid_w, int cap) {
  if (grid_h > cap || grid_w > cap) {
    throw ConfigError("token grid " + std::to_string(grid_w) + "x" +
                      std::to_string(grid_h) + " exceeds the cap of " +
                      std::to_string(cap) +
                      " (region-map memory grows with (WH)^2); use smaller images "
                      "or raise max_token_grid");
  }
}

Tensor image_as_input(const Tensor& image) {
  return image.reshaped({1, image.extent(0), image.extent(1)});
}

}  // namespace

LossBreakdown compute_scene_loss(const ModelParams& params,
                                 const CrowdScene& scene,
                                 const TrainConfig& config) {
  LossBreakdown out;
  ForwardResult fw = model_forward(image_as_input(scene.image), params);
  PosteriorMap post =
      posterior_map(scene.points, fw.density.grid.extent(0),
                    fw.density.grid.extent(1), fw.density.stride, config.sigma);
  Tensor l_ia;
  if (post.n > 0) {
    Tensor deviations = instance_deviations(post, fw.density.grid);
    const std::vector<int> mask =
        instance_mask(to_values(deviations), config.delta);
    l_ia = instance_attention_loss(deviations, mask);
  } else {
    l_ia = Tensor::scalar(0.0);
  }
  out.loss_ia = l_ia.value();
  if (config.lambda > 0.0 && params.config.use_lra) {
    Tensor r_lra = lar_regularizer(fw.features, fw.regions);
    out.r_lra = r_lra.value();
    out.total = total_loss(l_ia, r_lra, config.lambda);
  } else {
    out.r_lra = 0.0;
    out.total = l_ia;
  }
  return out;
}

TrainResult train(const std::string& data_dir, const TrainConfig& config,
                  const std::string& out_dir) {
  config.validate();
  const std::vector<CrowdScene> scenes = read_dataset(data_dir);
  if (scenes.empty()) {
    throw ConfigError("train: dataset " + data_dir + " is empty");
  }
  for (const CrowdScene& s : scenes) {
    check_grid_cap(s.image.extent(0) / 8, s.image.extent(1) / 8,
                   config.max_token_grid);
  }
  fs::create_directories(out_dir);

  ModelParams params = init_params(config.model(), Rng::stream(config.seed, 1).next());
  Rng pick_rng = Rng::stream(config.seed, 2);
  Adam adam(config.lr, config.beta1, config.beta2, config.adam_eps);

  const std::string loss_path = (fs::path(out_dir) / "loss.csv").string();
  std::ofstream loss_log(loss_path);
  if (!loss_log) throw IoError("cannot open " + loss_path + " for writing");
  loss_log << "step,loss_ia,r_lra,total\n";

  TrainResult result;
  result.loss_log_path = loss_path;
  for (int step = 1; step <= config.steps; ++step) {
    const CrowdScene& scene =
        scenes[pick_rng.uniform_int(static_cast<std::uint64_t>(scenes.size()))];
    Tape tape;
    ModelParams tracked = params.tracked(tape);
    LossBreakdown loss = compute_scene_loss(tracked, scene, config);
    const double total = loss.total.value();
    if (!std::isfinite(total)) {
      throw EvalError("training aborted at step " + std::to_string(step) +
                      ": non-finite loss (loss_ia=" + fmt17(loss.loss_ia) +
                      ", r_lra=" + fmt17(loss.r_lra) + ", scene seed " +
                      std::to_string(scene.seed) + ")");
    }
    if (loss.total.tracked()) {
      tape.backward(loss.total);
      std::vector<Tensor*> masters;
      params.for_each(
          [&](const std::string&, Tensor& t) { masters.push_back(&t); });
      std::vector<Tensor> grads;
      tracked.for_each([&](const std::string&, Tensor& t) {
        grads.push_back(tape.grad(t));
      });
      adam.step(masters, grads);
    }
    loss_log << step << "," << fmt17(loss.loss_ia) << "," << fmt17(loss.r_lra)
             << "," << fmt17(total) << "\n";
    result.final_loss = total;
    result.steps = step;
    if (step % config.checkpoint_every == 0 && step != config.steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "model_step%06d.mant", step);
      save_checkpoint((fs::path(out_dir) / name).string(), params);
    }
  }
  result.checkpoint_path = (fs::path(out_dir) / "model.mant").string();
  save_checkpoint(result.checkpoint_path, params);
  if (!loss_log) throw IoError("failed writing " + loss_path);
  return result;
}

std::pair<double, double> mae_mse(const std::vector<EvalRow>& rows) {
  if (rows.empty()) throw ConfigError("mae_mse: no rows");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const EvalRow& r : rows) {
    const double err = r.gt - r.predicted;
    abs_sum += std::fabs(err);
    sq_sum += err * err;
  }
  const double m = static_cast<double>(rows.size());
  return {abs_sum / m, std::sqrt(sq_sum / m)};
}

EvalReport evaluate(const std::string& data_dir, const std::string& ckpt_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelParams params = load_checkpoint(ckpt_path);
  const std::vector<CrowdScene> scenes = read_dataset(data_dir);
  if (scenes.empty()) {
    throw ConfigError("evaluate: dataset " + data_dir + " is empty");
  }
  EvalReport report;
  report.config_echo = "ckpt=" + ckpt_path + " dim=" + std::to_string(params.config.dim) +
                       " layers=" + std::to_string(params.config.layers) +
                       " use_lra=" + (params.config.use_lra ? "true" : "false");
  std::size_t index = 0;
  for (const CrowdScene& scene : scenes) {
    ForwardResult fw = model_forward(image_as_input(scene.image), params);
    EvalRow row;
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu", index++);
    row.image = name;
    row.gt = static_cast<double>(scene.points.size());
    row.predicted = fw.density.count();
    report.rows.push_back(row);
  }
  std::tie(report.mae, report.mse) = mae_mse(report.rows);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "image,gt,predicted\n";
  for (const EvalRow& r : report.rows) {
    out << r.image << "," << fmt17(r.gt) << "," << fmt17(r.predicted) << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<SweepRow> delta_sweep(const std::string& train_dir,
                                  const std::string& test_dir,
                                  const TrainConfig& config,
                                  const std::vector<double>& deltas,
                                  const std::string& out_dir) {
  if (deltas.empty()) throw ConfigError("delta_sweep: no deltas given");
  for (double d : deltas) {
    if (d <= 0.0 || d > 1.0) {
      throw ConfigError("delta_sweep: delta " + fmt17(d) + " outside (0, 1]");
    }
  }
  fs::create_directories(out_dir);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    TrainConfig run = config;
    run.delta = deltas[i];
    const std::string run_dir =
        (fs::path(out_dir) / ("delta_" + std::to_string(i))).string();
    TrainResult tr = train(train_dir, run, run_dir);
    EvalReport report = evaluate(test_dir, tr.checkpoint_path);
    rows.push_back({deltas[i], report.mae, report.mse});
  }
  const std::string csv_path = (fs::path(out_dir) / "delta_sweep.csv").string();
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot open " + csv_path + " for writing");
  out << "delta,mae,mse\n";
  for (const SweepRow& r : rows) {
    out << fmt17(r.delta) << "," << fmt17(r.mae) << "," << fmt17(r.mse) << "\n";
  }
  if (!out) throw IoError("failed writing " + csv_path);
  return rows;
}

std::vector<AblateRow> ablate(const std::string& train_dir,
                              const std::string& test_dir,
                              const TrainConfig& config,
                              const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<AblateRow> rows;
  int case_index = 0;
  for (int lra = 0; lra <= 1; ++lra) {
    for (int lar = 0; lar <= 1; ++lar) {
      for (int ial = 0; ial <= 1; ++ial) {
        TrainConfig run = config;
        run.use_lra = lra != 0;
        run.lambda = lar != 0 ? config.lambda : 0.0;
        run.delta = ial != 0 ? config.delta : 1.0;
        const std::string run_dir =
            (fs::path(out_dir) / ("case_" + std::to_string(case_index++))).string();
        TrainResult tr = train(train_dir, run, run_dir);
        EvalReport report = evaluate(test_dir, tr.checkpoint_path);
        rows.push_back({lra != 0, lar != 0, ial != 0, report.mae, report.mse});
      }
    }
  }
  const std::string csv_path = (fs::path(out_dir) / "ablate.csv").string();
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot open " + csv_path + " for writing");
  out << "lra,lar,ial,mae,mse\n";
  for (const AblateRow& r : rows) {
    out << (r.lra ? 1 : 0) << "," << (r.lar ? 1 : 0) << "," << (r.ial ? 1 : 0)
        << "," << fmt17(r.mae) << "," << fmt17(r.mse) << "\n";
  }
  if (!out) throw IoError("failed writing " + csv_path);
  return rows;
}

InferResult infer(const std::string& ckpt_path, const std::string& image_path,
                  const std::string& out_prefix,
                  const std::string& regions_prefix) {
  const ModelParams params = load_checkpoint(ckpt_path);
  Tensor image = read_pgm(image_path);
  const int h = image.extent(0), w = image.extent(1);
  if (h % 8 != 0 || w % 8 != 0) {
    const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
    throw ConfigError("infer: image extents " + std::to_string(w) + "x" +
                      std::to_string(h) + " must be divisible by 8; pad to " +
                      std::to_string(pw) + "x" + std::to_string(ph));
  }
  ForwardResult fw = model_forward(image_as_input(image), params);
  const Tensor& grid = fw.density.grid;
  const int gh = grid.extent(0), gw = grid.extent(1);

  {
    std::ofstream csv(out_prefix + ".csv");
    if (!csv) throw IoError("cannot open " + out_prefix + ".csv for writing");
    for (int y = 0; y < gh; ++y) {
      for (int x = 0; x < gw; ++x) {
        csv << x << "," << y << "," << fmt17(grid.at(y, x)) << "\n";
      }
    }
    if (!csv) throw IoError("failed writing " + out_prefix + ".csv");
  }
  {
    std::ofstream raw(out_prefix + ".raw", std::ios::binary);
    if (!raw) throw IoError("cannot open " + out_prefix + ".raw for writing");
    raw.write("MAND", 4);
    auto put_u32 = [&raw](std::uint32_t v) {
      unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                            static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff),
                            static_cast<unsigned char>((v >> 24) & 0xff)};
      raw.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(gw));
    put_u32(static_cast<std::uint32_t>(gh));
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const float f = static_cast<float>(grid[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(bits);
    }
    if (!raw) throw IoError("failed writing " + out_prefix + ".raw");
  }
  {
    double lo = grid[0], hi = grid[0];
    for (std::size_t i = 0; i < grid.size(); ++i) {
      lo = std::min(lo, grid[i]);
      hi = std::max(hi, grid[i]);
    }
    Tensor preview({gh, gw});
    if (hi > lo) {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        preview[i] = (grid[i] - lo) / (hi - lo);
      }
    }
    write_pgm(out_prefix + ".pgm", preview);
  }
  if (!regions_prefix.empty()) {
    if (!params.config.use_lra || fw.regions.empty()) {
      throw ConfigError("infer: this checkpoint was trained without region attention");
    }
    const RegionMaps& last = fw.regions.back();
    const int tw = last.grid_w, th = last.grid_h;
    const std::vector<GridPoint> probes = {
        {tw / 2, th / 2}, {tw / 4, th / 4}, {3 * tw / 4, th / 4},
        {tw / 4, 3 * th / 4}, {3 * tw / 4, 3 * th / 4}};
    export_region_maps(last, probes, regions_prefix);
  }
  InferResult result;
  result.count = fw.density.count();
  result.grid_w = gw;
  result.grid_h = gh;
  return result;
}

}  // namespace mancount
