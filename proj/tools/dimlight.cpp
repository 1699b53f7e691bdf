#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>

#include "dimlight/data/dataset.h"
#include "dimlight/data/image.h"
#include "dimlight/data/synth.h"
#include "dimlight/errors.h"
#include "dimlight/metrics/analysis.h"
#include "dimlight/model/gradient_suite.h"
#include "dimlight/model/inference.h"
#include "dimlight/training/checkpoint.h"
#include "dimlight/training/trainer.h"
#include "dimlight/values.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace dimlight::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json entries_json(const std::vector<std::pair<std::string, std::string>>& entries) {
  json j = json::object();
  for (const auto& [k, v] : entries) j[k] = v;
  return j;
}

// Written when a run starts and rewritten with the end time and status.
class Manifest {
 public:
  Manifest(fs::path path, const std::string& command, const std::vector<std::string>& argv) : path_(std::move(path)) {
    if (fs::exists(path_)) throw UsageError("refusing to overwrite existing run manifest " + path_.string());
    j_["command"] = command;
    j_["argv"] = argv;
    j_["version"] = DIMLIGHT_VERSION;
    j_["started_at"] = utc_now();
    j_["finished_at"] = nullptr;
    j_["status"] = "running";
    j_["config"] = json::object();
    j_["outputs"] = json::array();
  }
  json& operator[](const char* key) { return j_[key]; }
  void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void write() {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream out(path_);
    out << j_.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest " + path_.string());
  }
  void finish() {
    j_["finished_at"] = utc_now();
    j_["status"] = "ok";
    write();
  }

 private:
  fs::path path_;
  json j_;
};

fs::path sidecar(const fs::path& out) {
  auto p = out;
  p += ".manifest.json";
  return p;
}

std::pair<double, double> range_or(const std::string& key, const std::string& text, std::pair<double, double> def) {
  return text.empty() ? def : values::parse_range(key, text);
}

// ---- synth / scenes --------------------------------------------------------

struct SynthArgs {
  std::string src, out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string gamma, scale, sigma;
};

int run_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  data::DegradeRanges ranges;
  ranges.gamma = range_or("gamma-range", a.gamma, ranges.gamma);
  ranges.scale = range_or("scale-range", a.scale, ranges.scale);
  ranges.noise_sigma = range_or("sigma-range", a.sigma, ranges.noise_sigma);
  ranges.validate();
  if (a.count == 0) throw UsageError("--count must be at least 1");

  const fs::path out(a.out);
  Manifest m(out / "manifest.json", "synth", argv);
  m["seed"] = a.seed;
  m["config"] = {{"src", a.src},
                 {"count", a.count},
                 {"gamma_range", {ranges.gamma.first, ranges.gamma.second}},
                 {"scale_range", {ranges.scale.first, ranges.scale.second}},
                 {"sigma_range", {ranges.noise_sigma.first, ranges.noise_sigma.second}}};
  const auto sources = data::list_images(a.src);
  if (sources.empty()) throw DataError("no PNG images in " + a.src);
  fs::create_directories(out / "low");
  fs::create_directories(out / "high");
  m.write();

  std::mt19937_64 rng(a.seed);
  std::ofstream params(out / "params.csv");
  params << "id,source,gamma,scale,noise_sigma,seed\n";
  for (std::size_t i = 0; i < a.count; ++i) {
    const auto& src = sources[i % sources.size()];
    const auto p = data::sample_degrade(ranges, rng);
    char id[16];
    std::snprintf(id, sizeof id, "%04zu", i);
    const std::string name = std::string(id) + "_" + src.stem().string() + ".png";
    const auto high = data::load_image(src);
    data::save_image(high, out / "high" / name);
    data::save_image(data::synth_degrade(high, p), out / "low" / name);
    using values::format_double;
    params << fs::path(name).stem().string() << ',' << src.filename().string() << ',' << format_double(p.gamma) << ','
           << format_double(p.scale) << ',' << format_double(p.noise_sigma) << ',' << p.seed << '\n';
  }
  m.output(out / "low");
  m.output(out / "high");
  m.output(out / "params.csv");
  m.finish();
  std::cout << "wrote " << a.count << " pairs to " << out.string() << '\n';
  return kExitOk;
}

struct ScenesArgs {
  std::string out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::size_t height = 64, width = 64;
};

int run_scenes(const ScenesArgs& a, const std::vector<std::string>& argv) {
  if (a.count == 0 || a.height == 0 || a.width == 0) throw UsageError("--count, --height and --width must be >= 1");
  const fs::path out(a.out);
  Manifest m(out / "manifest.json", "scenes", argv);
  m["seed"] = a.seed;
  m["config"] = {{"count", a.count}, {"height", a.height}, {"width", a.width}};
  m.write();
  for (std::size_t i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu.png", i);
    data::save_image(data::render_scene(a.height, a.width, a.seed * 1000003u + i), out / name);
  }
  m.output(out);
  m.finish();
  std::cout << "wrote " << a.count << " scenes to " << out.string() << '\n';
  return kExitOk;
}

// ---- config resolution -----------------------------------------------------

struct ConfigArgs {
  std::string file;
  std::map<std::string, std::string> overrides;  // key -> value, set only when given
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.file, "key = value config file");
  for (const auto& key : training::valid_keys()) {
    cmd->add_option_function<std::string>(
        flag_name(key), [&args, key](const std::string& v) { args.overrides[key] = v; },
        "override config key " + key);
  }
}

// defaults (or the checkpoint's config) < file < command line
training::RunConfig resolve(training::RunConfig base, const ConfigArgs& args) {
  if (!args.file.empty()) training::apply_file(base, args.file);
  for (const auto& key : training::valid_keys()) {
    auto it = args.overrides.find(key);
    if (it != args.overrides.end()) training::apply_entry(base, key, it->second);
  }
  base.validate();
  return base;
}

// ---- init / train ----------------------------------------------------------

struct InitArgs {
  std::string out;
  ConfigArgs config;
  bool random_head = false;
};

int run_init(const InitArgs& a, const std::vector<std::string>& argv) {
  const auto cfg = resolve({}, a.config);
  const fs::path out(a.out);
  Manifest m(sidecar(out), "init", argv);
  m["seed"] = cfg.train.seed;
  m["config"] = entries_json(training::to_entries(cfg));
  m.write();
  model::Network<float> net(cfg.model);
  net.init(cfg.train.seed, {.zero_head = !a.random_head});
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  training::save_checkpoint(out, training::make_bundle(cfg, net, nullptr, 0, ""));
  m.output(out);
  m.finish();
  std::cout << "wrote " << out.string() << " (" << net.parameter_count() << " parameters)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, out, resume, eval;
  ConfigArgs config;
};

std::vector<data::PairedSample> load_dataset(const std::string& dir) {
  auto listing = data::scan_pairs(dir);
  for (const auto& w : listing.warnings) std::cerr << "warning: " << w << '\n';
  if (listing.pairs.empty()) throw DataError("no image pairs found under " + dir);
  return data::load_pairs(listing.pairs);
}

int run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  std::optional<training::CheckpointBundle> bundle;
  if (!a.resume.empty()) bundle = training::load_checkpoint(a.resume);
  const auto cfg = resolve(bundle ? bundle->config : training::RunConfig{}, a.config);

  const fs::path out(a.out);
  Manifest m(out / "manifest.json", "train", argv);
  m["seed"] = cfg.train.seed;
  m["config"] = entries_json(training::to_entries(cfg));
  m["data"] = a.data;
  m["eval"] = a.eval;
  m["resume"] = a.resume;
  m.write();
  {
    std::ofstream snap(out / "config.txt");
    snap << training::to_text(cfg);
  }

  const auto dataset = load_dataset(a.data);
  std::vector<data::PairedSample> eval_set;
  if (!a.eval.empty()) eval_set = load_dataset(a.eval);

  auto state = bundle ? training::TrainerState::resume(*bundle, cfg) : training::TrainerState::fresh(cfg);
  std::cout << "training " << state.net.parameter_count() << " parameters on " << dataset.size() << " pairs, "
            << "iterations " << state.iter + 1 << ".." << cfg.train.total_iters << '\n';
  const std::size_t every = std::max<std::size_t>(1, cfg.train.total_iters / 20);
  const auto t0 = std::chrono::steady_clock::now();
  training::TrainOptions opts;
  opts.out_dir = out;
  opts.eval_set = eval_set.empty() ? nullptr : &eval_set;
  opts.on_log = [&](const training::LogRow& r) {
    if (r.iter % every != 0 && r.iter != cfg.train.total_iters && !r.psnr) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("iter %6zu  loss %.6f  lr %.3g", r.iter, r.loss, r.lr);
    if (r.psnr) std::printf("  eval psnr %.3f ssim %.4f", *r.psnr, *r.ssim);
    std::printf("  %.1fs\n", secs);
    std::fflush(stdout);
  };
  training::train(state, dataset, opts);
  m.output(out / "config.txt");
  m.output(out / "metrics.csv");
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() == ".glsb") m.output(e.path());
  }
  m.finish();
  return kExitOk;
}

// ---- enhance / eval / erf --------------------------------------------------

struct EnhanceArgs {
  std::string ckpt, in, out;
};

int run_enhance(const EnhanceArgs& a, const std::vector<std::string>& argv) {
  const fs::path in(a.in), out(a.out);
  if (!fs::exists(in)) throw DataError("input does not exist: " + a.in);
  const bool dir = fs::is_directory(in);
  Manifest m(dir ? out / "manifest.json" : sidecar(out), "enhance", argv);
  const auto bundle = training::load_checkpoint(a.ckpt);
  m["config"] = entries_json(training::to_entries(bundle.config));
  m["checkpoint"] = a.ckpt;
  const auto net = training::load_network(bundle);
  const auto inputs = dir ? data::list_images(in) : std::vector<fs::path>{in};
  if (inputs.empty()) throw DataError("no PNG images in " + a.in);
  if (dir) fs::create_directories(out);
  m.write();
  for (const auto& p : inputs) {
    const auto target = dir ? out / p.filename() : out;
    if (!dir && target.has_parent_path()) fs::create_directories(target.parent_path());
    data::save_image(model::enhance(net, data::load_image(p)), target);
    m.output(target);
  }
  m.finish();
  std::cout << "enhanced " << inputs.size() << " image(s)\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, out;
};

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  const fs::path out(a.out);
  Manifest m(sidecar(out), "eval", argv);
  const auto bundle = training::load_checkpoint(a.ckpt);
  m["config"] = entries_json(training::to_entries(bundle.config));
  m["checkpoint"] = a.ckpt;
  m["data"] = a.data;
  const auto net = training::load_network(bundle);
  const auto samples = load_dataset(a.data);
  m.write();
  const auto report = metrics::evaluate(net, samples);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  metrics::write_report_csv(report, out);
  m.output(out);
  m.finish();
  std::printf("%zu images  mean psnr %.4f dB  mean ssim %.5f\n", report.rows.size(), report.mean_psnr,
              report.mean_ssim);
  return kExitOk;
}

struct ErfArgs {
  std::string ckpt, image, out, source;
};

std::pair<std::size_t, std::size_t> parse_source(const std::string& text, std::size_t h, std::size_t w) {
  if (text.empty()) return {h / 2, w / 2};
  const auto comma = text.find(',');
  long y = 0, x = 0;
  try {
    if (comma == std::string::npos) throw std::invalid_argument("no comma");
    std::size_t used = 0;
    const auto ys = text.substr(0, comma), xs = text.substr(comma + 1);
    y = std::stol(ys, &used);
    if (used != ys.size()) throw std::invalid_argument("y");
    x = std::stol(xs, &used);
    if (used != xs.size()) throw std::invalid_argument("x");
  } catch (const std::exception&) {
    throw UsageError("--source expects 'y,x', got '" + text + "'");
  }
  if (y < 0 || x < 0 || static_cast<std::size_t>(y) >= h || static_cast<std::size_t>(x) >= w) {
    throw UsageError("--source " + text + " lies outside the " + std::to_string(h) + "x" + std::to_string(w) +
                     " image");
  }
  return {static_cast<std::size_t>(y), static_cast<std::size_t>(x)};
}

int run_erf(const ErfArgs& a, const std::vector<std::string>& argv) {
  const auto size = data::read_image_size(a.image);
  const auto [y, x] = parse_source(a.source, size.height, size.width);
  if (size.height % 4 != 0 || size.width % 4 != 0) {
    throw DataError("ERF analysis needs image extents divisible by 4, got " + std::to_string(size.height) + "x" +
                    std::to_string(size.width));
  }
  const fs::path out(a.out);
  Manifest m(sidecar(out), "erf", argv);
  const auto bundle = training::load_checkpoint(a.ckpt);
  m["config"] = entries_json(training::to_entries(bundle.config));
  m["checkpoint"] = a.ckpt;
  m["image"] = a.image;
  m["source"] = {y, x};
  m.write();
  const auto net = training::load_network(bundle);
  const auto map = metrics::erf_map(net, data::load_image(a.image), y, x);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  data::save_image(metrics::erf_image(map), out);
  m.output(out);
  m.finish();
  std::size_t nonzero = 0;
  for (double v : map.raw) nonzero += v != 0.0;
  const auto corner = [&](std::size_t cy, std::size_t cx) { return map.raw[cy * map.width + cx] != 0.0; };
  const bool corners = corner(0, 0) && corner(0, map.width - 1) && corner(map.height - 1, 0) &&
                       corner(map.height - 1, map.width - 1);
  std::printf("source (%zu, %zu): %zu of %zu pixels nonzero, all corners nonzero: %s\n", y, x, nonzero,
              map.raw.size(), corners ? "yes" : "no");
  return kExitOk;
}

// ---- gradcheck -------------------------------------------------------------

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  const auto t0 = std::chrono::steady_clock::now();
  model::gradient_suite(seed, [&](const gradcheck::Report& r) {
    const bool pass = r.passed(model::kGradientTolerance);
    ok = ok && pass;
    std::printf("%-24s max rel error %.3e  (%zu entries)  %s\n", r.name.c_str(), r.max_rel_error, r.entries_checked,
                pass ? "ok" : ("FAIL at " + r.worst).c_str());
    std::fflush(stdout);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("gradcheck %s in %.1fs (tolerance %.0e)\n", ok ? "passed" : "FAILED", secs, model::kGradientTolerance);
  return ok ? kExitOk : kExitRuntime;
}

int main_impl(int argc, char** argv) {
  CLI::App app{"Low-light image enhancement with selective state space blocks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DIMLIGHT_VERSION);
  const std::vector<std::string> args(argv, argv + argc);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Degrade clean images into low/high training pairs");
  c_synth->add_option("--src", synth.src, "directory of clean PNG images")->required()->check(CLI::ExistingDirectory);
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--count", synth.count, "number of pairs")->required();
  c_synth->add_option("--seed", synth.seed, "random seed");
  c_synth->add_option("--gamma-range", synth.gamma, "gamma range a,b");
  c_synth->add_option("--scale-range", synth.scale, "brightness scale range a,b");
  c_synth->add_option("--sigma-range", synth.sigma, "noise sigma range a,b");

  ScenesArgs scenes;
  auto* c_scenes = app.add_subcommand("scenes", "Render procedural clean images");
  c_scenes->add_option("--out", scenes.out, "output directory")->required();
  c_scenes->add_option("--count", scenes.count, "number of images")->required();
  c_scenes->add_option("--seed", scenes.seed, "random seed");
  c_scenes->add_option("--height", scenes.height, "image height");
  c_scenes->add_option("--width", scenes.width, "image width");

  InitArgs init;
  auto* c_init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  c_init->add_option("--out", init.out, "checkpoint path")->required();
  c_init->add_flag("--random-head", init.random_head, "randomize the output head instead of zeroing it");
  add_config_options(c_init, init.config);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train on a directory of low/high pairs");
  c_train->add_option("--data", train.data, "dataset root with low/ and high/")->required();
  c_train->add_option("--out", train.out, "run directory")->required();
  c_train->add_option("--resume", train.resume, "checkpoint to continue from");
  c_train->add_option("--eval", train.eval, "held-out dataset root for periodic evaluation");
  add_config_options(c_train, train.config);

  EnhanceArgs enhance;
  auto* c_enhance = app.add_subcommand("enhance", "Enhance one image or a directory of images");
  c_enhance->add_option("--ckpt", enhance.ckpt, "checkpoint")->required();
  c_enhance->add_option("--in", enhance.in, "input PNG or directory")->required();
  c_enhance->add_option("--out", enhance.out, "output PNG or directory")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score a checkpoint on a paired dataset");
  c_eval->add_option("--ckpt", eval.ckpt, "checkpoint")->required();
  c_eval->add_option("--data", eval.data, "dataset root with low/ and high/")->required();
  c_eval->add_option("--out", eval.out, "metrics CSV")->required();

  ErfArgs erf;
  auto* c_erf = app.add_subcommand("erf", "Effective receptive field heatmap of one output pixel");
  c_erf->add_option("--ckpt", erf.ckpt, "checkpoint")->required();
  c_erf->add_option("--image", erf.image, "input PNG")->required();
  c_erf->add_option("--out", erf.out, "heatmap PNG")->required();
  c_erf->add_option("--source", erf.source, "output pixel y,x (default: centre)");

  std::uint64_t gc_seed = 0;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient in 64-bit");
  c_gc->add_option("--seed", gc_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*c_synth) return run_synth(synth, args);
  if (*c_scenes) return run_scenes(scenes, args);
  if (*c_init) return run_init(init, args);
  if (*c_train) return run_train(train, args);
  if (*c_enhance) return run_enhance(enhance, args);
  if (*c_eval) return run_eval(eval, args);
  if (*c_erf) return run_erf(erf, args);
  return run_gradcheck(gc_seed);
}

}  // namespace
}  // namespace dimlight::cli

int main(int argc, char** argv) {
  using namespace dimlight;
  try {
    return cli::main_impl(argc, argv);
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return cli::kExitRuntime;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return cli::kExitRuntime;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return cli::kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitRuntime;
  }
}
