#include "dimlight/tensor/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dimlight/tensor/tape.h"

namespace dimlight::gradcheck {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

Report check(const std::string& name, const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> wrt,
             const Options& options) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    Tensor<double> value;
    {
      auto rec = tape.record();
      value = loss();
    }
    tape.backward(value);
  }

  Report report;
  report.name = name;
  std::mt19937_64 rng(options.seed);
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor<double>& t = wrt[ti];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries_per_tensor != 0 && idx.size() > options.max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    auto values = t.data();
    for (std::size_t i : idx) {
      const double original = values[i];
      values[i] = original + options.step;
      const double f_plus = loss().item();
      values[i] = original - options.step;
      const double f_minus = loss().item();
      values[i] = original;
      const double numeric = (f_plus - f_minus) / (2.0 * options.step);
      const double err = relative_error(analytic[i], numeric);
      if (err > report.max_rel_error || report.entries_checked == 0) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst = "tensor " + std::to_string(ti) + ", index " + std::to_string(i) +
                       ": analytic " + std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
      ++report.entries_checked;
    }
    t.release_grad();
  }
  return report;
}

}  // namespace dimlight::gradcheck
