#include "nilmprune/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "nilmprune/errors.hpp"

namespace nilmprune {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'N', 'P', 'R', 'M'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    v = to_little(v);
    raw(&v, sizeof v);
  }
  void block(const Tensor& t, StorageDtype dtype) {
    for (double v : t.data()) {
      if (dtype == StorageDtype::F64) {
        le(std::bit_cast<std::uint64_t>(v));
      } else {
        le(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw FormatError(std::string("model file truncated while reading ") + what);
    }
    auto s = bytes.subspan(pos, n);
    pos += n;
    return s;
  }
  template <typename T>
  T le(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof v, what).data(), sizeof v);
    return to_little(v);
  }
  std::vector<double> block(std::size_t n, StorageDtype dtype, const char* what) {
    std::vector<double> out(n);
    for (auto& v : out) {
      if (dtype == StorageDtype::F64) {
        v = std::bit_cast<double>(le<std::uint64_t>(what));
      } else {
        v = static_cast<double>(std::bit_cast<float>(le<std::uint32_t>(what)));
      }
    }
    return out;
  }
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

json header_for(const ModelGraph& model, StorageDtype dtype) {
  json layers = json::array();
  for (const auto& l : model.layers) {
    json j = {{"kind", to_string(l.spec.kind)}};
    if (l.spec.has_params()) {
      j["in"] = l.spec.in;
      j["out"] = l.spec.out;
      if (l.spec.kind == LayerKind::Conv1D) {
        j["kernel"] = l.spec.kernel;
        j["stride"] = l.spec.stride;
      }
      j["prunable"] = l.spec.prunable;
      j["mask"] = !l.mask.empty();
      j["removed_units"] = l.removed_units;
    }
    layers.push_back(std::move(j));
  }
  json h = {
      {"format", "nilmprune-model"},
      {"dtype", dtype == StorageDtype::F64 ? "f64" : "f32"},
      {"window_len", model.window_len},
      {"seed", model.seed},
      {"epochs_trained", model.epochs_trained},
      {"has_initial", model.has_initial},
      {"has_masks", model.has_masks()},
      {"layers", std::move(layers)},
      {"loss_history", model.loss_history},
  };
  if (model.normalization) {
    h["normalization"] = {{"input_mean", model.normalization->input_mean},
                          {"input_std", model.normalization->input_std},
                          {"target_scale", model.normalization->target_scale}};
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelGraph& model, StorageDtype dtype) {
  model.validate();
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.le(kModelFormatVersion);
  const std::string header = header_for(model, dtype).dump();
  w.le(static_cast<std::uint32_t>(header.size()));
  w.raw(header.data(), header.size());
  for (const auto& l : model.layers) {
    if (!l.spec.has_params()) continue;
    w.block(l.weight, dtype);
    w.block(l.bias, dtype);
  }
  if (model.has_initial) {
    for (const auto& l : model.layers) {
      if (!l.spec.has_params()) continue;
      w.block(l.initial_weight, dtype);
      w.block(l.initial_bias, dtype);
    }
  }
  for (const auto& l : model.layers) {
    if (l.mask.empty()) continue;
    std::vector<std::uint8_t> bits((l.mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < l.mask.size(); ++i)
      if (l.mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    w.raw(bits.data(), bits.size());
  }
  return std::move(w.out);
}

ModelGraph deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("not a model file: bad magic (expected NPRM)");
  }
  const auto version = r.le<std::uint8_t>("version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model file version " + std::to_string(version));
  }
  const auto header_len = r.le<std::uint32_t>("header length");
  auto header_bytes = r.take(header_len, "header");
  json h;
  try {
    h = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what());
  }

  ModelGraph model;
  StorageDtype dtype;
  std::vector<bool> masked;
  try {
    if (h.at("format") != "nilmprune-model") throw FormatError("model header has wrong format tag");
    const std::string d = h.at("dtype");
    if (d != "f64" && d != "f32") throw FormatError("unknown dtype '" + d + "'");
    dtype = d == "f64" ? StorageDtype::F64 : StorageDtype::F32;
    model.window_len = h.at("window_len");
    model.seed = h.at("seed");
    model.epochs_trained = h.at("epochs_trained");
    model.has_initial = h.at("has_initial");
    model.loss_history = h.at("loss_history").get<std::vector<double>>();
    if (h.contains("normalization")) {
      const auto& n = h["normalization"];
      model.normalization = NormStats{n.at("input_mean"), n.at("input_std"), n.at("target_scale")};
    }
    for (const auto& j : h.at("layers")) {
      Layer l;
      l.spec.kind = layer_kind_from_string(j.at("kind"));
      bool has_mask = false;
      if (l.spec.has_params()) {
        l.spec.in = j.at("in");
        l.spec.out = j.at("out");
        if (l.spec.kind == LayerKind::Conv1D) {
          l.spec.kernel = j.at("kernel");
          l.spec.stride = j.at("stride");
        }
        l.spec.prunable = j.at("prunable");
        l.removed_units = j.at("removed_units");
        has_mask = j.at("mask");
      }
      masked.push_back(has_mask);
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is missing or mistypes a field: ") + e.what());
  }
  try {
    (void)model.input_shapes();
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model header describes an invalid layer chain: ") + e.what());
  }

  auto read_params = [&](bool initial) {
    for (auto& l : model.layers) {
      if (!l.spec.has_params()) continue;
      Tensor w(l.spec.weight_shape(), r.block(l.spec.weight_count(), dtype, "parameters"), !initial);
      Tensor b(Shape{l.spec.out}, r.block(l.spec.out, dtype, "parameters"), !initial);
      (initial ? l.initial_weight : l.weight) = std::move(w);
      (initial ? l.initial_bias : l.bias) = std::move(b);
    }
  };
  read_params(false);
  if (model.has_initial) read_params(true);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (!masked[i]) continue;
    auto& l = model.layers[i];
    const std::size_t n = l.spec.weight_count();
    auto bits = r.take((n + 7) / 8, "mask bitset");
    l.mask.resize(n);
    for (std::size_t k = 0; k < n; ++k) l.mask[k] = (bits[k / 8] >> (k % 8)) & 1u;
  }
  if (r.pos != bytes.size()) {
    throw FormatError("model file has " + std::to_string(bytes.size() - r.pos) +
                      " trailing bytes");
  }
  model.validate();
  return model;
}

void save_model(const ModelGraph& model, const std::filesystem::path& path, StorageDtype dtype) {
  const auto bytes = serialize_model(model, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace nilmprune
