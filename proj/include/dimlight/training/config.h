#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dimlight/model/config.h"

namespace dimlight::training {

struct TrainConfig {
  std::size_t patch_size = 64;
  std::size_t batch_size = 4;
  std::size_t total_iters = 2000;
  double lr_init = 2e-4;
  double lr_min = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::size_t eval_every = 0;        // 0: no periodic evaluation

  /// Throws ConfigError on a patch size not divisible by 4, zero iterations
  /// or batch, or out-of-range optimizer settings.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::vector<std::pair<std::string, std::string>> to_entries(const TrainConfig& cfg);
bool apply_entry(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Everything a training run is configured by.
struct RunConfig {
  model::ModelConfig model;
  TrainConfig train;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

std::vector<std::pair<std::string, std::string>> to_entries(const RunConfig& cfg);

/// Every accepted key, model keys first.
std::vector<std::string> valid_keys();

/// Sets one key. Throws ConfigError listing the valid keys when `key` is
/// unknown, or naming the key when `value` is malformed.
void apply_entry(RunConfig& cfg, const std::string& key, const std::string& value);

/// `key = value` lines; blank lines and `#` comments are skipped. Later
/// lines override earlier ones.
void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");

/// Reads and applies a config file. Throws ConfigError naming the path when
/// it cannot be read.
void apply_file(RunConfig& cfg, const std::filesystem::path& path);

/// Inverse of apply_text.
std::string to_text(const RunConfig& cfg);

}  // namespace dimlight::training
