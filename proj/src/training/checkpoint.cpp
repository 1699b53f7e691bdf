#include "dimlight/training/checkpoint.h"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "dimlight/errors.h"
#include "dimlight/values.h"

namespace dimlight::training {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'L', 'S', 'B'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  template <typename U>
  void put(U v) {
    char raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    buf_.append(raw, sizeof(U));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void text(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  const char* take(std::size_t n, const char* what) {
    if (n > end_ - pos_) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " reading " + what + " (" +
                        std::to_string(n) + " bytes wanted, " + std::to_string(end_ - pos_) + " left)");
    }
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string text(const char* what) {
    const auto n = get<std::uint32_t>(what);
    return std::string(take(n, what), n);
  }
  std::size_t pos() const { return pos_; }
  std::size_t end() const { return end_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& buf, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < n) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string config_text(const CheckpointBundle& b) {
  std::string out = to_text(b.config);
  out += "state.iter = " + std::to_string(b.iter) + "\n";
  out += "state.adam_step = " + std::to_string(b.adam_step) + "\n";
  return out;
}

void parse_config_text(CheckpointBundle& b, const std::string& text, std::size_t offset) {
  std::istringstream in(text);
  std::string line, rest;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    const auto key = values::trim(line.substr(0, eq == std::string::npos ? line.size() : eq));
    const auto value = eq == std::string::npos ? std::string() : values::trim(line.substr(eq + 1));
    try {
      if (key == "state.iter") {
        b.iter = values::parse_u64(key, value);
      } else if (key == "state.adam_step") {
        b.adam_step = values::parse_u64(key, value);
      } else {
        rest += line + "\n";
      }
    } catch (const ConfigError& e) {
      throw FormatError("checkpoint config block at offset " + std::to_string(offset) + ": " + e.what());
    }
  }
  try {
    apply_text(b.config, rest, "checkpoint config block");
    b.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint config block at offset " + std::to_string(offset) + ": " + e.what());
  }
}

std::vector<model::NamedTensor<float>> expected_tensors(const model::Network<float>& net, const AdamState* adam) {
  auto params = net.parameters();
  std::vector<model::NamedTensor<float>> out = params;
  if (adam) {
    if (adam->m.size() != params.size() || adam->v.size() != params.size()) {
      throw ContractError("optimizer state does not mirror the network parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"opt.m." + params[i].name, adam->m[i]});
    for (std::size_t i = 0; i < params.size(); ++i) out.push_back({"opt.v." + params[i].name, adam->v[i]});
  }
  return out;
}

}  // namespace

Tensor<float> CheckpointBundle::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  return {};
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.text(config_text(bundle));
  w.put(static_cast<std::uint32_t>(bundle.tensors.size()));
  for (const auto& [name, t] : bundle.tensors) {
    w.text(name);
    w.put(kDtypeF32);
    for (auto e : t.shape()) w.put(static_cast<std::uint32_t>(e));
    w.bytes(t.data().data(), t.numel() * sizeof(float));
  }
  w.text(bundle.rng_state);
  w.put(crc_of(w.buffer(), w.buffer().size()));

  // Written under a temporary name, then renamed into place.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic at offset 0 in " + path.string());
  }
  if (buf.size() < 4 + sizeof(std::uint32_t)) throw FormatError("checkpoint truncated at offset 4");
  Reader r(buf, buf.size() - sizeof(std::uint32_t));
  r.take(4, "magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 4 (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }

  CheckpointBundle b;
  const std::size_t config_at = r.pos();
  parse_config_text(b, r.text("config block"), config_at);
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    auto name = r.text("tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) {
      throw FormatError("tensor '" + name + "' at offset " + std::to_string(at) + " has unsupported dtype " +
                        std::to_string(dtype));
    }
    Shape s{};
    for (auto& e : s) e = r.get<std::uint32_t>("tensor extents");
    const std::size_t n = numel(s);
    if (n > (r.end() - r.pos()) / sizeof(float)) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(r.pos()) + " in data of tensor '" + name +
                        "' " + to_string(s));
    }
    std::vector<float> v(n);
    std::memcpy(v.data(), r.take(n * sizeof(float), "tensor data"), n * sizeof(float));
    b.tensors.push_back({std::move(name), Tensor<float>(s, std::move(v))});
  }
  b.rng_state = r.text("rng state");
  if (r.pos() != r.end()) {
    throw FormatError("unexpected " + std::to_string(r.end() - r.pos()) + " trailing bytes at offset " +
                      std::to_string(r.pos()));
  }
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + r.end(), sizeof(stored));
  if (stored != crc_of(buf, r.end())) {
    throw FormatError("checkpoint CRC mismatch at offset " + std::to_string(r.end()) + " in " + path.string());
  }
  return b;
}

CheckpointBundle make_bundle(const RunConfig& config, const model::Network<float>& net, const AdamState* adam,
                             std::uint64_t iter, const std::string& rng_state) {
  CheckpointBundle b;
  b.config = config;
  b.config.model = net.config();
  b.iter = iter;
  b.adam_step = adam ? adam->step : 0;
  for (auto& [name, t] : expected_tensors(net, adam)) b.tensors.push_back({name, t.clone()});
  b.rng_state = rng_state;
  return b;
}

void restore(const CheckpointBundle& bundle, model::Network<float>& net, AdamState* adam) {
  auto targets = expected_tensors(net, adam);
  std::map<std::string, const Tensor<float>*> stored;
  for (const auto& t : bundle.tensors) stored[t.name] = &t.tensor;

  std::vector<std::string> diff;
  std::map<std::string, bool> used;
  for (const auto& [name, t] : targets) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      diff.push_back("  missing   " + name + " " + to_string(t.shape()));
    } else {
      used[name] = true;
      if (it->second->shape() != t.shape()) {
        diff.push_back("  shape     " + name + " checkpoint " + to_string(it->second->shape()) + " vs model " +
                       to_string(t.shape()));
      }
    }
  }
  for (const auto& t : bundle.tensors) {
    const bool optimizer = t.name.rfind("opt.", 0) == 0;
    if (!used.count(t.name) && (adam || !optimizer)) diff.push_back("  unexpected " + t.name + " " + to_string(t.tensor.shape()));
  }
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match the model (" + std::to_string(diff.size()) + " differences):";
    const std::size_t shown = std::min<std::size_t>(diff.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) msg += "\n" + diff[i];
    if (shown < diff.size()) msg += "\n  ... " + std::to_string(diff.size() - shown) + " more";
    throw FormatError(msg);
  }
  for (auto& [name, t] : targets) {
    const auto& src = *stored.at(name);
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
  if (adam) adam->step = bundle.adam_step;
}

model::Network<float> load_network(const CheckpointBundle& bundle) {
  model::Network<float> net(bundle.config.model);
  net.init(0);
  restore(bundle, net, nullptr);
  return net;
}

}  // namespace dimlight::training
