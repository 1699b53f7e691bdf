#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dimlight/data/dataset.h"
#include "dimlight/model/network.h"
#include "dimlight/training/checkpoint.h"
#include "dimlight/training/config.h"
#include "dimlight/training/optim.h"

namespace dimlight::training {

struct TrainerState {
  RunConfig config;
  model::Network<float> net;
  AdamState adam;
  std::mt19937_64 rng;
  std::size_t iter = 0;  // completed iterations

  /// Freshly initialized network and sampler, both derived from config.train.seed.
  static TrainerState fresh(const RunConfig& config);
  /// Continues exactly where the checkpoint left off. `config` may only
  /// differ from the saved one in total_iters, checkpoint_every and eval_every.
  static TrainerState resume(const CheckpointBundle& bundle, const std::optional<RunConfig>& config = std::nullopt);

  CheckpointBundle snapshot() const;
  std::string rng_text() const;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
};

/// sample -> forward -> MAE -> backward -> Adam at the cosine rate for the
/// current iteration. Throws DivergenceError with the iteration, rate and
/// gradient norms when the loss or a gradient is not finite.
StepResult train_step(TrainerState& state, const std::vector<data::PairedSample>& dataset);

struct LogRow {
  std::size_t iter = 0;  // 1-based count of completed iterations
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> psnr;
  std::optional<double> ssim;
};

struct TrainOptions {
  std::filesystem::path out_dir{};  // empty: no files written
  const std::vector<data::PairedSample>* eval_set = nullptr;
  std::size_t stop_at = 0;  // 0: run to total_iters
  std::function<void(const LogRow&)> on_log{};
};

/// Runs iterations until total_iters (or stop_at). With an out_dir, appends
/// rows to metrics.csv (`iter,loss,lr,psnr,ssim`), writes
/// checkpoint_<iter>.glsb every checkpoint_every iterations and last.glsb at
/// the end. Evaluation runs every eval_every iterations and on the last one.
std::vector<LogRow> train(TrainerState& state, const std::vector<data::PairedSample>& dataset,
                          const TrainOptions& options = {});

}  // namespace dimlight::training
