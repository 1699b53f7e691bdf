#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dimlight/tensor/tensor.h"

namespace dimlight::data {

struct PairPaths {
  std::string id;  // shared file stem
  std::filesystem::path low;
  std::filesystem::path high;
};

struct PairListing {
  std::vector<PairPaths> pairs;      // sorted by id
  std::vector<std::string> warnings;  // unmatched or unsupported files
};

/// Matches root/low/<stem>.png with root/high/<stem>.png. Throws DataError
/// when a subdirectory is missing or the two images of a pair differ in size.
PairListing scan_pairs(const std::filesystem::path& root);

struct PairedSample {
  std::string id;
  Tensor<float> low;   // (1, 3, h, w)
  Tensor<float> high;  // (1, 3, h, w)
};

PairedSample load_pair(const PairPaths& paths);
std::vector<PairedSample> load_pairs(const std::vector<PairPaths>& paths);

/// PNG files directly inside dir, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace dimlight::data
