#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mancount/config.hpp"
#include "mancount/gradcheck.hpp"
#include "mancount/harness.hpp"
#include "mancount/rng.hpp"
#include "mancount/synthcrowd.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<double> parse_deltas(const std::string& csv) {
  std::vector<double> deltas;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    const std::string item = csv.substr(pos, comma - pos);
    try {
      deltas.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw mancount::ConfigError("bad delta value \"" + item + "\"");
    }
    pos = comma + 1;
  }
  return deltas;
}

mancount::TrainConfig load_config(const std::string& path) {
  if (path.empty()) return mancount::TrainConfig{};
  return mancount::parse_train_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd counting with learnable region attention"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Write synthetic train/test datasets");
  std::string gen_out;
  int gen_train = 200, gen_test = 50, gen_size = 64;
  int gen_count_min = 5, gen_count_max = 50;
  std::uint64_t gen_seed = 1;
  generate->add_option("--out", gen_out, "Output directory")->required();
  generate->add_option("--train", gen_train, "Number of training scenes");
  generate->add_option("--test", gen_test, "Number of test scenes");
  generate->add_option("--size", gen_size, "Image side length (pixels)");
  generate->add_option("--count-min", gen_count_min, "Minimum head count");
  generate->add_option("--count-max", gen_count_max, "Maximum head count");
  generate->add_option("--seed", gen_seed, "Base seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset directory");
  std::string train_data, train_config, train_out;
  train_cmd->add_option("--data", train_data, "Dataset directory (with manifest.txt)")->required();
  train_cmd->add_option("--config", train_config, "Config file (key = value lines)");
  train_cmd->add_option("--out", train_out, "Output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (MAE/MSE)");
  std::string eval_data, eval_ckpt, eval_out = ".";
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--out", eval_out, "Directory for eval.csv");

  // delta-sweep
  auto* sweep_cmd = app.add_subcommand("delta-sweep", "Train/evaluate across deltas");
  std::string sweep_data, sweep_config, sweep_deltas, sweep_out = ".";
  sweep_cmd->add_option("--data", sweep_data,
                        "Dataset root containing train/ and test/")->required();
  sweep_cmd->add_option("--config", sweep_config, "Config file");
  sweep_cmd->add_option("--deltas", sweep_deltas, "Comma-separated deltas")->required();
  sweep_cmd->add_option("--out", sweep_out, "Output directory");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the 2x2x2 ablation grid");
  std::string ablate_data, ablate_config, ablate_out = ".";
  ablate_cmd->add_option("--data", ablate_data,
                         "Dataset root containing train/ and test/")->required();
  ablate_cmd->add_option("--config", ablate_config, "Config file");
  ablate_cmd->add_option("--out", ablate_out, "Output directory");

  // gradcheck
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gate");
  std::uint64_t gc_seed = 1;
  gradcheck_cmd->add_option("--seed", gc_seed, "Seed");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Predict a density map for one image");
  std::string infer_ckpt, infer_image, infer_out, infer_regions;
  infer_cmd->add_option("--ckpt", infer_ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--image", infer_image, "Input PGM image")->required();
  infer_cmd->add_option("--out", infer_out, "Output prefix")->required();
  infer_cmd->add_option("--regions-out", infer_regions,
                        "Also export last-layer region maps under this prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      mancount::SceneParams params;
      params.size = gen_size;
      params.count_min = gen_count_min;
      params.count_max = gen_count_max;
      std::vector<mancount::CrowdScene> train_scenes, test_scenes;
      // disjoint per-scene seed ranges for the two splits
      for (int i = 0; i < gen_train; ++i) {
        train_scenes.push_back(mancount::generate_scene(params, gen_seed + i));
      }
      for (int i = 0; i < gen_test; ++i) {
        test_scenes.push_back(
            mancount::generate_scene(params, gen_seed + gen_train + i));
      }
      mancount::write_dataset(train_scenes, (fs::path(gen_out) / "train").string());
      mancount::write_dataset(test_scenes, (fs::path(gen_out) / "test").string());
      std::cout << "wrote " << gen_train << " train / " << gen_test
                << " test scenes under " << gen_out << "\n";
    } else if (train_cmd->parsed()) {
      mancount::TrainConfig config = load_config(train_config);
      mancount::TrainResult result = mancount::train(train_data, config, train_out);
      std::cout << "trained " << result.steps << " steps, final loss "
                << result.final_loss << "\ncheckpoint: " << result.checkpoint_path
                << "\nloss log: " << result.loss_log_path << "\n";
    } else if (eval_cmd->parsed()) {
      mancount::EvalReport report = mancount::evaluate(eval_data, eval_ckpt);
      mancount::write_eval_csv(report, (fs::path(eval_out) / "eval.csv").string());
      std::printf("MAE=%.6f MSE=%.6f\n", report.mae, report.mse);
    } else if (sweep_cmd->parsed()) {
      mancount::TrainConfig config = load_config(sweep_config);
      auto rows = mancount::delta_sweep((fs::path(sweep_data) / "train").string(),
                                        (fs::path(sweep_data) / "test").string(),
                                        config, parse_deltas(sweep_deltas), sweep_out);
      std::printf("%8s %10s %10s\n", "delta", "MAE", "MSE");
      for (const auto& r : rows) {
        std::printf("%8.3f %10.4f %10.4f\n", r.delta, r.mae, r.mse);
      }
      std::cout << "wrote " << (fs::path(sweep_out) / "delta_sweep.csv").string() << "\n";
    } else if (ablate_cmd->parsed()) {
      mancount::TrainConfig config = load_config(ablate_config);
      auto rows = mancount::ablate((fs::path(ablate_data) / "train").string(),
                                   (fs::path(ablate_data) / "test").string(),
                                   config, ablate_out);
      std::printf("%4s %4s %4s %10s %10s\n", "lra", "lar", "ial", "MAE", "MSE");
      for (const auto& r : rows) {
        std::printf("%4d %4d %4d %10.4f %10.4f\n", r.lra ? 1 : 0, r.lar ? 1 : 0,
                    r.ial ? 1 : 0, r.mae, r.mse);
      }
      std::cout << "wrote " << (fs::path(ablate_out) / "ablate.csv").string() << "\n";
    } else if (gradcheck_cmd->parsed()) {
      mancount::GradCheckOptions options;
      options.seed = gc_seed;
      const bool ok = mancount::run_gradcheck(options, std::cout);
      std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
      return ok ? 0 : 1;
    } else if (infer_cmd->parsed()) {
      mancount::InferResult result =
          mancount::infer(infer_ckpt, infer_image, infer_out, infer_regions);
      std::printf("count=%.6f (%dx%d density grid)\n", result.count,
                  result.grid_w, result.grid_h);
    }
  } catch (const mancount::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
