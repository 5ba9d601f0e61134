#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "mancount/config.hpp"
#include "mancount/model.hpp"
#include "mancount/synthcrowd.hpp"

namespace mancount {

/// Total training loss of one scene plus its components. `params` may
/// be tape-tracked (training/gradcheck) or plain (evaluation probes).
struct LossBreakdown {
  Tensor total;  // scalar
  double loss_ia = 0.0;
  double r_lra = 0.0;
};

LossBreakdown compute_scene_loss(const ModelParams& params,
                                 const CrowdScene& scene,
                                 const TrainConfig& config);

struct TrainResult {
  std::string checkpoint_path;
  std::string loss_log_path;
  double final_loss = 0.0;
  int steps = 0;
};

/// Per-step: forward -> posterior -> deviations -> mask -> instance
/// loss + lambda * LAR -> backward -> Adam. Writes loss.csv
/// (step,loss_ia,r_lra,total) and checkpoints under out_dir; fully
/// seeded. A non-finite loss aborts with a diagnostic step dump.
TrainResult train(const std::string& data_dir, const TrainConfig& config,
                  const std::string& out_dir);

struct EvalRow {
  std::string image;
  double gt = 0.0;
  double predicted = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mae = 0.0;
  double mse = 0.0;  // root-mean-square form
  double wall_seconds = 0.0;
  std::string config_echo;
};

EvalReport evaluate(const std::string& data_dir, const std::string& ckpt_path);

/// Writes the per-image CSV (image,gt,predicted) next to the report.
void write_eval_csv(const EvalReport& report, const std::string& path);

struct SweepRow {
  double delta = 0.0;
  double mae = 0.0;
  double mse = 0.0;
};

/// Trains one model per delta under identical seeds, evaluates each on
/// the test split, writes delta_sweep.csv (delta,mae,mse in input
/// order) under out_dir.
std::vector<SweepRow> delta_sweep(const std::string& train_dir,
                                  const std::string& test_dir,
                                  const TrainConfig& config,
                                  const std::vector<double>& deltas,
                                  const std::string& out_dir);

struct AblateRow {
  bool lra = false;
  bool lar = false;
  bool ial = false;
  double mae = 0.0;
  double mse = 0.0;
};

/// 2x2x2 grid {LRA on/off} x {LAR on/off (lambda=0)} x {IAL on/off
/// (delta=1)} under identical seeds; writes ablate.csv under out_dir
/// with the flags echoed per row.
std::vector<AblateRow> ablate(const std::string& train_dir,
                              const std::string& test_dir,
                              const TrainConfig& config,
                              const std::string& out_dir);

struct InferResult {
  double count = 0.0;
  int grid_w = 0;
  int grid_h = 0;
};

/// Writes <prefix>.csv (x,y,value per cell), <prefix>.raw ("MAND",
/// u32 W', u32 H', float32 LE values) and <prefix>.pgm (min-max
/// normalized preview). Optionally exports last-layer region maps for a
/// default probe set under regions_prefix.
InferResult infer(const std::string& ckpt_path, const std::string& image_path,
                  const std::string& out_prefix,
                  const std::string& regions_prefix = "");

/// MAE and root-mean-square MSE over (gt, predicted) pairs.
std::pair<double, double> mae_mse(const std::vector<EvalRow>& rows);

}  // namespace mancount
