#include "dimlight/training/trainer.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dimlight/errors.h"
#include "dimlight/metrics/analysis.h"
#include "dimlight/tensor/tape.h"
#include "dimlight/training/sampler.h"
#include "dimlight/values.h"

namespace dimlight::training {

namespace {

constexpr std::uint64_t kSamplerStream = 0x9E3779B97F4A7C15ull;

void track_gradients(model::Network<float>& net) {
  for (auto& p : net.parameters()) p.tensor.set_requires_grad(true);
}

AdamOptions adam_options(const TrainConfig& cfg) { return {cfg.beta1, cfg.beta2, cfg.eps}; }

std::string divergence_report(const TrainerState& s, double loss, double lr) {
  double total = 0.0;
  double worst = -1.0;
  std::string worst_name = "-";
  std::size_t nonfinite = 0;
  for (const auto& [name, t] : s.net.parameters()) {
    if (!t.has_grad()) continue;
    double sq = 0.0;
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
    if (!std::isfinite(sq)) ++nonfinite;
    total += sq;
    const double n = std::sqrt(sq);
    if (!(n <= worst)) {
      worst = n;
      worst_name = name;
    }
  }
  std::ostringstream msg;
  msg << "training diverged at iteration " << s.iter + 1 << ": loss " << loss << ", lr " << lr
      << ", global grad norm " << std::sqrt(total) << ", largest " << worst_name << " (" << worst << "), "
      << nonfinite << " tensors with non-finite gradients";
  return msg.str();
}

}  // namespace

TrainerState TrainerState::fresh(const RunConfig& config) {
  config.validate();
  TrainerState s{config, model::Network<float>(config.model), {}, std::mt19937_64(config.train.seed ^ kSamplerStream),
                 0};
  s.net.init(config.train.seed);
  track_gradients(s.net);
  std::vector<Tensor<float>> params;
  for (auto& p : s.net.parameters()) params.push_back(p.tensor);
  s.adam = AdamState::zeros_like(params);
  return s;
}

TrainerState TrainerState::resume(const CheckpointBundle& bundle, const std::optional<RunConfig>& config) {
  RunConfig cfg = bundle.config;
  if (config) {
    RunConfig a = *config, b = bundle.config;
    for (auto* c : {&a, &b}) {
      c->train.total_iters = 0;
      c->train.checkpoint_every = 0;
      c->train.eval_every = 0;
    }
    if (!(a == b)) {
      throw ConfigError("resume config differs from the checkpoint in more than total_iters, checkpoint_every, "
                        "eval_every");
    }
    cfg = *config;
  }
  cfg.validate();
  if (bundle.iter > cfg.train.total_iters) {
    throw ConfigError("checkpoint is at iteration " + std::to_string(bundle.iter) + ", beyond total_iters " +
                      std::to_string(cfg.train.total_iters));
  }
  TrainerState s = fresh(cfg);
  restore(bundle, s.net, &s.adam);
  if (bundle.rng_state.empty()) throw FormatError("checkpoint holds no sampler state and cannot be resumed");
  std::istringstream in(bundle.rng_state);
  in >> s.rng;
  if (!in) throw FormatError("checkpoint sampler state is malformed");
  s.iter = bundle.iter;
  return s;
}

std::string TrainerState::rng_text() const {
  std::ostringstream out;
  out << rng;
  return out.str();
}

CheckpointBundle TrainerState::snapshot() const { return make_bundle(config, net, &adam, iter, rng_text()); }

StepResult train_step(TrainerState& s, const std::vector<data::PairedSample>& dataset) {
  const auto& tc = s.config.train;
  const double lr = cosine_lr(s.iter, tc.total_iters, tc.lr_init, tc.lr_min);
  const auto batch = sample_batch(dataset, s.rng, tc.batch_size, tc.patch_size);

  auto named = s.net.parameters();
  std::vector<Tensor<float>> params;
  for (auto& p : named) {
    p.tensor.zero_grad();
    params.push_back(p.tensor);
  }
  Tape<float> tape;
  Tensor<float> loss;
  {
    auto rec = tape.record();
    loss = mae_loss(s.net.forward(batch.low), batch.high);
  }
  tape.backward(loss);
  const double value = loss.item();

  bool finite = std::isfinite(value);
  for (const auto& p : params) {
    if (!finite) break;
    for (float g : p.grad()) {
      if (!std::isfinite(g)) {
        finite = false;
        break;
      }
    }
  }
  if (!finite) throw DivergenceError(divergence_report(s, value, lr));

  adam_step(params, s.adam, lr, adam_options(tc));
  ++s.iter;
  return {value, lr};
}

std::vector<LogRow> train(TrainerState& s, const std::vector<data::PairedSample>& dataset,
                          const TrainOptions& options) {
  const auto& tc = s.config.train;
  const std::size_t end = options.stop_at ? std::min(options.stop_at, tc.total_iters) : tc.total_iters;

  std::ofstream csv;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto path = options.out_dir / "metrics.csv";
    const bool fresh_file = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    csv.open(path, std::ios::app);
    if (!csv) throw IoError("cannot write " + path.string());
    if (fresh_file) csv << "iter,loss,lr,psnr,ssim\n";
  }

  std::vector<LogRow> rows;
  while (s.iter < end) {
    const auto step = train_step(s, dataset);
    LogRow row{s.iter, step.loss, step.lr, std::nullopt, std::nullopt};
    const bool last = s.iter == tc.total_iters;
    if (options.eval_set && !options.eval_set->empty() && ((tc.eval_every && s.iter % tc.eval_every == 0) || last)) {
      const auto report = metrics::evaluate(s.net, *options.eval_set);
      row.psnr = report.mean_psnr;
      row.ssim = report.mean_ssim;
    }
    if (csv.is_open()) {
      using values::format_double;
      csv << row.iter << ',' << format_double(row.loss) << ',' << format_double(row.lr) << ','
          << (row.psnr ? format_double(*row.psnr) : "") << ',' << (row.ssim ? format_double(*row.ssim) : "")
          << '\n';
      csv.flush();
      if (tc.checkpoint_every && s.iter % tc.checkpoint_every == 0) {
        save_checkpoint(options.out_dir / ("checkpoint_" + std::to_string(s.iter) + ".glsb"), s.snapshot());
      }
    }
    if (options.on_log) options.on_log(row);
    rows.push_back(row);
  }
  if (!options.out_dir.empty()) save_checkpoint(options.out_dir / "last.glsb", s.snapshot());
  return rows;
}

}  // namespace dimlight::training
