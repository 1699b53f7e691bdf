#pragma once

#include <random>
#include <vector>

#include "dimlight/data/dataset.h"

namespace dimlight::training {

/// 0..3: counter-clockwise quarter turns; 4..7: horizontal flip, then turns.
/// Applied to a (1, c, s, s) square patch.
Tensor<float> dihedral(const Tensor<float>& patch, unsigned transform);

struct Batch {
  Tensor<float> low;   // (b, 3, p, p)
  Tensor<float> high;  // (b, 3, p, p)
  std::vector<std::size_t> source;  // sample index per batch entry
  std::vector<unsigned> transform;  // dihedral transform per batch entry
};

/// Uniform sample, crop window and transform per entry, shared by the two
/// images of a pair. Throws DataError naming the pair when an image is
/// smaller than the patch.
Batch sample_batch(const std::vector<data::PairedSample>& dataset, std::mt19937_64& rng, std::size_t batch_size,
                   std::size_t patch_size);

}  // namespace dimlight::training
