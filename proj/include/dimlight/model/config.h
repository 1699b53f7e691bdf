#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace dimlight::model {

enum class PriorMode {
  kImplicit,  // prior features guide LESSM bias and IRSK gates
  kExplicit,  // additionally, the head predicts an illumination map and N = L * I
  kNone,      // no prior pathways at all
};

std::string to_string(PriorMode mode);
/// Throws ConfigError for unknown names.
PriorMode parse_prior_mode(const std::string& name);

struct ModelConfig {
  std::size_t base_width = 16;
  std::vector<std::size_t> enc_depths{1, 2};
  std::size_t bottleneck_depth = 2;
  std::vector<std::size_t> dec_depths{2, 1};
  std::size_t state_size = 16;
  std::size_t expand = 2;
  std::vector<std::size_t> irsk_kernels{3, 5};
  PriorMode prior_mode = PriorMode::kImplicit;
  bool local_bias_enabled = true;
  bool irsk_enabled = true;
  // false leaves only the D feedthrough in every scan (conv-only network).
  bool scan_enabled = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool uses_prior() const { return prior_mode != PriorMode::kNone; }
  bool operator==(const ModelConfig&) const = default;
};

/// Spatial scales of the U-Net; feature width at scale i is 2^i * base_width.
inline constexpr std::size_t kScales = 3;

/// Serialized as ordered `key=value` pairs (checkpoints, manifests, config
/// files share these names).
std::vector<std::pair<std::string, std::string>> to_entries(const ModelConfig& cfg);
/// Returns false for keys that are not model keys; throws ConfigError for
/// known keys with malformed values.
bool apply_entry(ModelConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> entry_keys();

}  // namespace dimlight::model
