#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dimlight/data/dataset.h"
#include "dimlight/model/network.h"

namespace dimlight::metrics {

struct ErfMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t source_y = 0;
  std::size_t source_x = 0;
  std::vector<double> raw;         // L1 over channels of d(sum_c N[c, y, x]) / dL
  std::vector<double> normalized;  // raw / max(raw), all zero when raw is
};

/// Effective receptive field of output pixel (y, x) for a (1, 3, h, w) input
/// with h, w multiples of 4. Throws ContractError when the source lies
/// outside the image.
ErfMap erf_map(const model::Network<float>& net, const Tensor<float>& input, std::size_t y, std::size_t x);

/// (1, 1, h, w) image of the normalized map.
Tensor<float> erf_image(const ErfMap& map);

struct MetricRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// Enhances every low image (padding to multiples of 4, cropping back,
/// clamping to [0, 1]) and scores it against its high image. Throws
/// DataError for an empty dataset.
MetricReport evaluate(const model::Network<float>& net, const std::vector<data::PairedSample>& samples);

/// Scores the inputs themselves, the pass-through baseline.
MetricReport evaluate_identity(const std::vector<data::PairedSample>& samples);

/// `id,psnr_db,ssim` with one row per image and a final `mean` row.
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace dimlight::metrics
