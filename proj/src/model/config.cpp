#include "dimlight/model/config.h"

#include "dimlight/errors.h"
#include "dimlight/values.h"

namespace dimlight::model {

std::string to_string(PriorMode mode) {
  switch (mode) {
    case PriorMode::kImplicit:
      return "implicit";
    case PriorMode::kExplicit:
      return "explicit";
    case PriorMode::kNone:
      return "none";
  }
  return "?";
}

PriorMode parse_prior_mode(const std::string& name) {
  const std::string t = values::trim(name);
  if (t == "implicit") return PriorMode::kImplicit;
  if (t == "explicit") return PriorMode::kExplicit;
  if (t == "none") return PriorMode::kNone;
  throw ConfigError("invalid value '" + name + "' for prior_mode: expected implicit, explicit or none");
}

void ModelConfig::validate() const {
  if (base_width == 0) throw ConfigError("base_width must be >= 1");
  if (enc_depths.size() != kScales - 1 || dec_depths.size() != kScales - 1) {
    throw ConfigError("enc_depths and dec_depths need exactly " + std::to_string(kScales - 1) +
                      " entries (three spatial scales)");
  }
  if (state_size == 0) throw ConfigError("state_size must be >= 1");
  if (expand == 0) throw ConfigError("expand must be >= 1");
  if (irsk_kernels.empty()) throw ConfigError("irsk_kernels must list at least one kernel size");
  for (std::size_t i = 0; i < irsk_kernels.size(); ++i) {
    const std::size_t k = irsk_kernels[i];
    if (k == 0 || k % 2 == 0) throw ConfigError("irsk_kernels entries must be odd, got " + std::to_string(k));
    if (i > 0 && k < irsk_kernels[i - 1]) {
      throw ConfigError("irsk_kernels must be ascending, got " + values::format_size_list(irsk_kernels));
    }
  }
}

std::vector<std::pair<std::string, std::string>> to_entries(const ModelConfig& cfg) {
  return {
      {"base_width", std::to_string(cfg.base_width)},
      {"enc_depths", values::format_size_list(cfg.enc_depths)},
      {"bottleneck_depth", std::to_string(cfg.bottleneck_depth)},
      {"dec_depths", values::format_size_list(cfg.dec_depths)},
      {"state_size", std::to_string(cfg.state_size)},
      {"expand", std::to_string(cfg.expand)},
      {"irsk_kernels", values::format_size_list(cfg.irsk_kernels)},
      {"prior_mode", to_string(cfg.prior_mode)},
      {"local_bias", values::format_bool(cfg.local_bias_enabled)},
      {"irsk", values::format_bool(cfg.irsk_enabled)},
      {"scan", values::format_bool(cfg.scan_enabled)},
  };
}

std::vector<std::string> entry_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : to_entries(ModelConfig{})) keys.push_back(k);
  return keys;
}

bool apply_entry(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "base_width") {
    cfg.base_width = values::parse_size(key, value);
  } else if (key == "enc_depths") {
    cfg.enc_depths = values::parse_size_list(key, value);
  } else if (key == "bottleneck_depth") {
    cfg.bottleneck_depth = values::parse_size(key, value);
  } else if (key == "dec_depths") {
    cfg.dec_depths = values::parse_size_list(key, value);
  } else if (key == "state_size") {
    cfg.state_size = values::parse_size(key, value);
  } else if (key == "expand") {
    cfg.expand = values::parse_size(key, value);
  } else if (key == "irsk_kernels") {
    cfg.irsk_kernels = values::parse_size_list(key, value);
  } else if (key == "prior_mode") {
    cfg.prior_mode = parse_prior_mode(value);
  } else if (key == "local_bias") {
    cfg.local_bias_enabled = values::parse_bool(key, value);
  } else if (key == "irsk") {
    cfg.irsk_enabled = values::parse_bool(key, value);
  } else if (key == "scan") {
    cfg.scan_enabled = values::parse_bool(key, value);
  } else {
    return false;
  }
  return true;
}

}  // namespace dimlight::model
