#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dimlight/model/network.h"
#include "dimlight/training/config.h"
#include "dimlight/training/optim.h"

namespace dimlight::training {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Little-endian file layout:
///   "GLSB" | u16 version | u32 len + config text | u32 tensor count |
///   per tensor: u32 name len + name, u8 dtype (0 = f32), 4 x u32 extents,
///   raw f32 data | u32 len + rng text | u32 crc32 of everything before it.
/// Optimizer moments live in the tensor table as "opt.m.<name>" and
/// "opt.v.<name>"; iteration and optimizer step sit in the config text as
/// state.iter and state.adam_step.
struct CheckpointBundle {
  RunConfig config;
  std::uint64_t iter = 0;
  std::uint64_t adam_step = 0;
  std::vector<model::NamedTensor<float>> tensors;
  std::string rng_state;  // empty when no generator was saved

  /// Tensor by exact name, or an undefined tensor.
  Tensor<float> find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle);

/// Throws FormatError with a byte offset on bad magic, unsupported version,
/// truncation, CRC mismatch or a malformed config block; IoError when the
/// file cannot be read.
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a network and, optionally, its optimizer. Tensors are copied.
CheckpointBundle make_bundle(const RunConfig& config, const model::Network<float>& net, const AdamState* adam,
                             std::uint64_t iter, const std::string& rng_state);

/// Copies the bundle's parameters (and moments, when `adam` is given) into
/// existing tensors. Throws FormatError listing every missing, unexpected or
/// differently shaped tensor when the tables disagree.
void restore(const CheckpointBundle& bundle, model::Network<float>& net, AdamState* adam);

/// Network built from the bundle's model config with its weights.
model::Network<float> load_network(const CheckpointBundle& bundle);

}  // namespace dimlight::training
