#include "dimlight/training/config.h"

#include <fstream>
#include <sstream>

#include "dimlight/errors.h"
#include "dimlight/values.h"

namespace dimlight::training {

void TrainConfig::validate() const {
  if (patch_size == 0 || patch_size % 4 != 0) {
    throw ConfigError("patch_size must be a positive multiple of 4, got " + std::to_string(patch_size));
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (total_iters == 0) throw ConfigError("total_iters must be >= 1");
  if (!(lr_init > 0.0)) throw ConfigError("lr_init must be positive");
  if (!(lr_min >= 0.0 && lr_min <= lr_init)) throw ConfigError("lr_min must lie in [0, lr_init]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

std::vector<std::pair<std::string, std::string>> to_entries(const TrainConfig& cfg) {
  using values::format_double;
  return {
      {"patch_size", std::to_string(cfg.patch_size)},
      {"batch_size", std::to_string(cfg.batch_size)},
      {"total_iters", std::to_string(cfg.total_iters)},
      {"lr_init", format_double(cfg.lr_init)},
      {"lr_min", format_double(cfg.lr_min)},
      {"beta1", format_double(cfg.beta1)},
      {"beta2", format_double(cfg.beta2)},
      {"eps", format_double(cfg.eps)},
      {"seed", std::to_string(cfg.seed)},
      {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
      {"eval_every", std::to_string(cfg.eval_every)},
  };
}

bool apply_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using namespace values;
  if (key == "patch_size") {
    cfg.patch_size = parse_size(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_size(key, value);
  } else if (key == "total_iters") {
    cfg.total_iters = parse_size(key, value);
  } else if (key == "lr_init") {
    cfg.lr_init = parse_double(key, value);
  } else if (key == "lr_min") {
    cfg.lr_min = parse_double(key, value);
  } else if (key == "beta1") {
    cfg.beta1 = parse_double(key, value);
  } else if (key == "beta2") {
    cfg.beta2 = parse_double(key, value);
  } else if (key == "eps") {
    cfg.eps = parse_double(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "checkpoint_every") {
    cfg.checkpoint_every = parse_size(key, value);
  } else if (key == "eval_every") {
    cfg.eval_every = parse_size(key, value);
  } else {
    return false;
  }
  return true;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

std::vector<std::pair<std::string, std::string>> to_entries(const RunConfig& cfg) {
  auto out = model::to_entries(cfg.model);
  for (auto& kv : to_entries(cfg.train)) out.push_back(std::move(kv));
  return out;
}

std::vector<std::string> valid_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : to_entries(RunConfig{})) keys.push_back(k);
  return keys;
}

void apply_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (model::apply_entry(cfg.model, key, value) || apply_entry(cfg.train, key, value)) return;
  std::string list;
  for (const auto& k : valid_keys()) list += (list.empty() ? "" : ", ") + k;
  throw ConfigError("unknown config key '" + key + "'; valid keys: " + list);
}

void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = values::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    try {
      apply_entry(cfg, values::trim(line.substr(0, eq)), values::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  apply_text(cfg, ss.str(), path.string());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : to_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace dimlight::training
