// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "microlab/csv.hpp"
#include "microlab/error.hpp"

namespace microlab {

namespace {

constexpr char kMagic[5] = {'M', 'L', 'A', 'B', '1'};
constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 32;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write checkpoint " + path.string());
  }
  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw DataError("write failed for checkpoint " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open checkpoint " + path.string());
  }
  template <typename T>
  T get() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) fail("truncated file");
    return to_little(v);
  }
  std::string get_str() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 20)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) fail("truncated file");
    return s;
  }
  void get_bytes(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (!in_) fail("truncated file");
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint " + path_.string() + ": " + what);
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

void write_record(Writer& w, std::uint8_t kind, const ParamEntry& e) {
  w.put(kind);
  w.put_str(e.block);
  w.put_str(e.name);
  w.put(static_cast<std::uint32_t>(e.value.rank()));
  for (auto d : e.value.shape()) w.put(static_cast<std::uint64_t>(d));
  for (double v : e.value.data()) w.put(v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParameterSet& params) {
  Writer w(path);
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  for (std::size_t v : {config.input_hw, config.base_channels, config.encoder_stages, config.rsd_skip_stage,
                        config.rsd_out_channels, config.num_output_channels})
    w.put(static_cast<std::uint64_t>(v));
  w.put(config.dropout_rate);
  w.put(static_cast<std::uint64_t>(params.params().size() + params.stats().size()));
  for (const auto& e : params.params()) write_record(w, 0, e);
  for (const auto& e : params.stats()) write_record(w, 1, e);
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[sizeof kMagic];
  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic (not an MLAB1 checkpoint)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ck;
  std::size_t* fields[] = {&ck.config.input_hw,       &ck.config.base_channels,    &ck.config.encoder_stages,
                           &ck.config.rsd_skip_stage, &ck.config.rsd_out_channels, &ck.config.num_output_channels};
  for (auto* f : fields) *f = static_cast<std::size_t>(r.get<std::uint64_t>());
  ck.config.dropout_rate = r.get<double>();
  try {
    ck.config.validate();
  } catch (const ContractError& e) {
    r.fail(std::string("invalid model config: ") + e.what());
  }

  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) r.fail("unknown record kind " + std::to_string(kind));
    std::string block = r.get_str();
    std::string name = r.get_str();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) r.fail("record " + name + " has invalid rank " + std::to_string(rank));
    std::vector<std::size_t> shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0 || dim > kMaxDim) r.fail("record " + name + " has invalid extent");
      shape.push_back(static_cast<std::size_t>(dim));
    }
    std::vector<double> data(shape_product(shape));
    for (auto& v : data) v = r.get<double>();
    Tensor t(std::move(shape), std::move(data));
    if (kind == 0)
      ck.params.add_param(std::move(block), std::move(name), std::move(t));
    else
      ck.params.add_stat(std::move(block), std::move(name), std::move(t));
  }
  if (!r.at_end()) r.fail("trailing bytes after the last record");

  Rng rng(0);
  const ParameterSet reference = SegmentationNet(ck.config).build(rng);
  if (!reference.same_structure(ck.params)) r.fail("parameters do not match the stored model config");
  return ck;
}

void save_omega(const std::filesystem::path& path, const UpdateHyperparams& omega) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "lr=" << format_double(omega.lr) << '\n'
      << "steps=" << omega.steps << '\n'
      << "inner_batch=" << omega.inner_batch << '\n'
      << "dropout_rate=" << format_double(omega.dropout_rate) << '\n'
      << "aug_rate=" << format_double(omega.aug_rate) << '\n'
      << "l2_lambda=" << format_double(omega.l2_lambda) << '\n'
      << "mode_tag=" << to_string(omega.mode_tag) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

UpdateHyperparams load_omega(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open omega file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path.string() + ": missing key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto number = [&](const std::string& key) {
    const std::string v = take(key);
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw DataError(path.string() + ": key '" + key + "' is not a number: " + v);
    return d;
  };
  auto count = [&](const std::string& key) {
    const double d = number(key);
    if (d < 0 || d != std::floor(d)) throw DataError(path.string() + ": key '" + key + "' must be a nonnegative integer");
    return static_cast<std::size_t>(d);
  };
  UpdateHyperparams w;
  w.lr = number("lr");
  w.steps = count("steps");
  w.inner_batch = count("inner_batch");
  w.dropout_rate = number("dropout_rate");
  w.aug_rate = number("aug_rate");
  w.l2_lambda = number("l2_lambda");
  try {
    w.mode_tag = omega_tag_from_string(take("mode_tag"));
    w.validate();
  } catch (const ContractError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!kv.empty()) throw DataError(path.string() + ": unknown key '" + kv.begin()->first + "'");
  return w;
}

}  // namespace microlab
