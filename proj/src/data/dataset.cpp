#include "dimlight/data/dataset.h"

#include <algorithm>
#include <map>

#include "dimlight/data/image.h"
#include "dimlight/errors.h"

namespace dimlight::data {
namespace fs = std::filesystem;
namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png";
}

std::map<std::string, fs::path> stems(const fs::path& dir, std::vector<std::string>& warnings) {
  if (!fs::is_directory(dir)) throw DataError("missing dataset directory " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (!is_png(entry.path())) {
      warnings.push_back("ignoring unsupported file " + entry.path().string());
      continue;
    }
    out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_png(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

PairListing scan_pairs(const fs::path& root) {
  PairListing res;
  const auto lows = stems(root / "low", res.warnings);
  const auto highs = stems(root / "high", res.warnings);
  for (const auto& [id, lp] : lows) {
    const auto it = highs.find(id);
    if (it == highs.end()) {
      res.warnings.push_back("no high counterpart for " + lp.string());
      continue;
    }
    if (read_image_size(lp) != read_image_size(it->second)) {
      throw DataError("extent mismatch between " + lp.string() + " and " + it->second.string());
    }
    res.pairs.push_back({id, lp, it->second});
  }
  for (const auto& [id, hp] : highs) {
    if (!lows.count(id)) res.warnings.push_back("no low counterpart for " + hp.string());
  }
  return res;
}

PairedSample load_pair(const PairPaths& paths) {
  PairedSample s{paths.id, load_image(paths.low), load_image(paths.high)};
  if (s.low.shape() != s.high.shape()) {
    throw DataError("extent mismatch between " + paths.low.string() + " and " + paths.high.string());
  }
  return s;
}

std::vector<PairedSample> load_pairs(const std::vector<PairPaths>& paths) {
  std::vector<PairedSample> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_pair(p));
  return out;
}

}  // namespace dimlight::data
