#include "dimlight/metrics/analysis.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dimlight/errors.h"
#include "dimlight/metrics/metrics.h"
#include "dimlight/model/inference.h"
#include "dimlight/tensor/ops.h"
#include "dimlight/tensor/tape.h"
#include "dimlight/values.h"

namespace dimlight::metrics {
namespace {

Tensor<float> clamp01(const Tensor<float>& x) {
  Tensor<float> out = x.clone();
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

MetricReport finish(MetricReport r) {
  if (r.rows.empty()) throw DataError("evaluation needs at least one image pair");
  for (const auto& row : r.rows) {
    r.mean_psnr += row.psnr;
    r.mean_ssim += row.ssim;
  }
  r.mean_psnr /= static_cast<double>(r.rows.size());
  r.mean_ssim /= static_cast<double>(r.rows.size());
  return r;
}

}  // namespace

ErfMap erf_map(const model::Network<float>& net, const Tensor<float>& input, std::size_t y, std::size_t x) {
  const auto [n, c, h, w] = input.shape();
  if (n != 1 || c != 3) throw DimensionError("erf_map expects a (1, 3, h, w) image, got " + to_string(input.shape()));
  if (y >= h || x >= w) {
    throw ContractError("erf source (" + std::to_string(y) + ", " + std::to_string(x) + ") outside a " +
                        std::to_string(h) + "x" + std::to_string(w) + " image");
  }
  Tensor<float> in = input.clone();
  in.set_requires_grad(true);
  Tape<float> tape;
  Tensor<float> loss;
  {
    auto rec = tape.record();
    const Tensor<float> out = net.forward(in);
    Tensor<float> mask(out.shape());
    for (std::size_t k = 0; k < 3; ++k) mask(0, k, y, x) = 1.0f;
    loss = ops::sum(ops::mul(out, mask));
  }
  tape.backward(loss);
  ErfMap m{h, w, y, x, std::vector<double>(h * w, 0.0), {}};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < h * w; ++i) m.raw[i] += std::abs(static_cast<double>(in.grad()[k * h * w + i]));
  }
  const double peak = *std::max_element(m.raw.begin(), m.raw.end());
  m.normalized.resize(h * w, 0.0);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < h * w; ++i) m.normalized[i] = m.raw[i] / peak;
  }
  return m;
}

Tensor<float> erf_image(const ErfMap& map) {
  Tensor<float> img(Shape{1, 1, map.height, map.width});
  for (std::size_t i = 0; i < map.normalized.size(); ++i) img.data()[i] = static_cast<float>(map.normalized[i]);
  return img;
}

MetricReport evaluate(const model::Network<float>& net, const std::vector<data::PairedSample>& samples) {
  MetricReport r;
  for (const auto& s : samples) {
    const Tensor<float> out = clamp01(model::enhance(net, s.low));
    r.rows.push_back({s.id, psnr(out, s.high), ssim(out, s.high)});
  }
  return finish(std::move(r));
}

MetricReport evaluate_identity(const std::vector<data::PairedSample>& samples) {
  MetricReport r;
  for (const auto& s : samples) r.rows.push_back({s.id, psnr(s.low, s.high), ssim(s.low, s.high)});
  return finish(std::move(r));
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "id,psnr_db,ssim\n";
  for (const auto& row : report.rows) {
    f << row.id << ',' << values::format_double(row.psnr) << ',' << values::format_double(row.ssim) << '\n';
  }
  f << "mean," << values::format_double(report.mean_psnr) << ',' << values::format_double(report.mean_ssim) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace dimlight::metrics
