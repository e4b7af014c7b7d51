#include "nvsed/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nvsed/error.hpp"
#include "nvsed/rng.hpp"

namespace nvsed {
namespace {

constexpr char kMagic[4] = {'N', 'V', 'S', 'D'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

void ModelSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kShape, "model spec: " + what); };
  if (input_bins <= 0 || channels <= 0 || kernel <= 0 || groups <= 0 || num_blocks < 0 ||
      num_classes <= 0 || bottleneck_divisor <= 0) {
    fail("all sizes must be positive");
  }
  if (channels % groups != 0) fail("channels must be divisible by groups");
  if (channels % bottleneck_divisor != 0) fail("channels must be divisible by the bottleneck divisor");
  if (!(dropout >= 0.0f && dropout < 1.0f)) fail("dropout must be in [0, 1)");
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"input_bins", s.input_bins},
                     {"channels", s.channels},
                     {"kernel", s.kernel},
                     {"groups", s.groups},
                     {"bottleneck_divisor", s.bottleneck_divisor},
                     {"num_blocks", s.num_blocks},
                     {"num_classes", s.num_classes},
                     {"leaky_slope", s.leaky_slope},
                     {"dropout", s.dropout},
                     {"residual", s.residual == ResidualSpan::kWholeBlock ? "whole_block" : "bottleneck"}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  ModelSpec d;
  s.input_bins = j.value("input_bins", d.input_bins);
  s.channels = j.value("channels", d.channels);
  s.kernel = j.value("kernel", d.kernel);
  s.groups = j.value("groups", d.groups);
  s.bottleneck_divisor = j.value("bottleneck_divisor", d.bottleneck_divisor);
  s.num_blocks = j.value("num_blocks", d.num_blocks);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  s.dropout = j.value("dropout", d.dropout);
  const std::string residual = j.value("residual", std::string("whole_block"));
  if (residual == "whole_block") {
    s.residual = ResidualSpan::kWholeBlock;
  } else if (residual == "bottleneck") {
    s.residual = ResidualSpan::kBottleneck;
  } else {
    throw Error(ErrorCode::kFormat, "unknown residual span '" + residual + "'");
  }
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<TensorInfo> expected_tensors(const ModelSpec& s) {
  const int n = s.channels;
  std::vector<TensorInfo> out;
  out.push_back({"stem.weight", {s.kernel, s.input_bins, n}});
  out.push_back({"stem.bias", {n}});
  for (int b = 0; b < s.num_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    out.push_back({p + "grouped.weight", {s.kernel, n / s.groups, n}});
    out.push_back({p + "grouped.bias", {n}});
    out.push_back({p + "reduce.weight", {1, n, s.bottleneck_channels()}});
    out.push_back({p + "reduce.bias", {s.bottleneck_channels()}});
    out.push_back({p + "expand.weight", {1, s.bottleneck_channels(), n}});
    out.push_back({p + "expand.bias", {n}});
  }
  out.push_back({"head.weight", {1, n, s.num_classes}});
  out.push_back({"head.bias", {s.num_classes}});
  return out;
}

const Tensor& ModelWeights::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw Error(ErrorCode::kShape, "missing tensor '" + std::string(name) + "'");
}

Tensor& ModelWeights::tensor(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelWeights&>(*this).tensor(name));
}

void validate_weights(const ModelWeights& w) {
  w.spec.validate();
  if (static_cast<int>(w.classes.size()) != w.spec.num_classes) {
    throw Error(ErrorCode::kShape, "class list has " + std::to_string(w.classes.size()) +
                                       " names, spec has " + std::to_string(w.spec.num_classes));
  }
  const auto expected = expected_tensors(w.spec);
  if (w.tensors.size() != expected.size()) {
    throw Error(ErrorCode::kShape, "expected " + std::to_string(expected.size()) + " tensors, got " +
                                       std::to_string(w.tensors.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = w.tensors[i];
    if (t.name != expected[i].name) {
      throw Error(ErrorCode::kShape, "tensor " + std::to_string(i) + " is '" + t.name +
                                         "', expected '" + expected[i].name + "'");
    }
    if (t.shape != expected[i].shape || t.data.size() != t.numel()) {
      throw Error(ErrorCode::kShape, "tensor '" + t.name + "' has shape " + shape_string(t.shape) +
                                         " (" + std::to_string(t.data.size()) + " values), expected " +
                                         shape_string(expected[i].shape));
    }
  }
  if (w.feature_norm) {
    const auto bins = static_cast<std::size_t>(w.spec.input_bins);
    if (w.feature_norm->offset.size() != bins || w.feature_norm->scale.size() != bins) {
      throw Error(ErrorCode::kShape, "feature normalization must have one entry per input bin");
    }
  }
}

ModelWeights zero_weights(const ModelSpec& spec) {
  spec.validate();
  ModelWeights w;
  w.spec = spec;
  for (const auto& info : expected_tensors(spec)) {
    Tensor t{info.name, info.shape, {}};
    t.data.assign(t.numel(), 0.0f);
    w.tensors.push_back(std::move(t));
  }
  return w;
}

ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed) {
  ModelWeights w = zero_weights(spec);
  Rng rng(seed);
  for (auto& t : w.tensors) {
    if (t.shape.size() != 3) continue;  // biases stay zero
    const double fan_in = static_cast<double>(t.shape[0]) * t.shape[1];
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  return w;
}

std::vector<std::uint8_t> serialize_weights(const ModelWeights& w) {
  validate_weights(w);
  nlohmann::json header;
  header["spec"] = w.spec;
  header["classes"] = w.classes.names();
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& t : w.tensors) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  if (w.feature_norm) {
    header["feature_norm"] = {{"offset", w.feature_norm->offset}, {"scale", w.feature_norm->scale}};
  }
  if (w.user_id) header["user_id"] = *w.user_id;
  header["metadata"] = w.metadata;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kWeightFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : w.tensors) {
    for (float f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, "bad magic: not an NVSD weight file");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kWeightFormatVersion) {
    throw Error(ErrorCode::kVersion, "weight format version " + std::to_string(version) +
                                         " is not supported (expected " +
                                         std::to_string(kWeightFormatVersion) + ")");
  }
  const std::size_t header_len = get_u32(bytes.data() + 8);
  if (12 + header_len > bytes.size()) throw Error(ErrorCode::kTruncated, "weight header is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("weight header is not valid JSON: ") + e.what());
  }

  ModelWeights w;
  try {
    w.spec = header.at("spec").get<ModelSpec>();
    w.classes = ClassSet(header.at("classes").get<std::vector<std::string>>());
    if (header.contains("feature_norm")) {
      FeatureNorm norm;
      norm.offset = header["feature_norm"].at("offset").get<std::vector<float>>();
      norm.scale = header["feature_norm"].at("scale").get<std::vector<float>>();
      w.feature_norm = std::move(norm);
    }
    if (header.contains("user_id")) w.user_id = header["user_id"].get<std::string>();
    if (header.contains("metadata")) w.metadata = header["metadata"];
    std::size_t offset = 12 + header_len;
    for (const auto& entry : header.at("tensors")) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      const std::size_t n = t.numel();
      if (offset + 4 * n > bytes.size()) {
        throw Error(ErrorCode::kTruncated, "tensor '" + t.name + "' declares " + std::to_string(n) +
                                               " floats but the file ends after " +
                                               std::to_string((bytes.size() - offset) / 4));
      }
      t.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = get_u32(bytes.data() + offset + 4 * i);
        std::memcpy(&t.data[i], &bits, 4);
      }
      offset += 4 * n;
      w.tensors.push_back(std::move(t));
    }
    if (offset != bytes.size()) {
      throw Error(ErrorCode::kFormat, std::to_string(bytes.size() - offset) + " trailing bytes after payload");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("malformed weight header: ") + e.what());
  }
  validate_weights(w);
  return w;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

bool same_trunk(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.spec == b.spec) || a.tensors.size() != b.tensors.size() || a.feature_norm != b.feature_norm) {
    return false;
  }
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& ta = a.tensors[i];
    if (ta.name.rfind("head.", 0) == 0) continue;
    const auto& tb = b.tensors[i];
    if (ta.name != tb.name || ta.shape != tb.shape ||
        std::memcmp(ta.data.data(), tb.data.data(), ta.data.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace nvsed
