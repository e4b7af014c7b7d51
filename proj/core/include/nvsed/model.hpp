#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/classes.hpp"

namespace nvsed {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

// Where the identity shortcut of each residual block starts.
enum class ResidualSpan {
  kWholeBlock,  // out = x + expand(act(reduce(act(grouped(x)))))
  kBottleneck,  // h = act(grouped(x)); out = h + expand(act(reduce(h)))
};

// Hyperparameters of the causal temporal convolutional network.
struct ModelSpec {
  int input_bins = 64;
  int channels = 256;  // N
  int kernel = 5;      // k of the stem and of the grouped convolutions
  int groups = 4;      // g
  int bottleneck_divisor = 4;
  int num_blocks = 5;
  int num_classes = 17;  // C
  float leaky_slope = 0.01f;
  float dropout = 0.1f;  // training only
  ResidualSpan residual = ResidualSpan::kWholeBlock;

  int bottleneck_channels() const { return channels / bottleneck_divisor; }
  // Input frames visible to one output frame: 1 + (k-1)(1 + num_blocks).
  int receptive_field() const { return 1 + (kernel - 1) * (1 + num_blocks); }
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

// Convolution kernels are stored as [k][in_channels / groups][out_channels]:
// output channel o belongs to group o / (out / groups) and reads input
// channels group * (in / groups) + i.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  std::size_t numel() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
};

// Names and shapes of every parameter, in serialization order.
std::vector<TensorInfo> expected_tensors(const ModelSpec& spec);

// Fixed per-bin affine map applied to features before the stem:
// x' = (x - offset) * scale.
struct FeatureNorm {
  std::vector<float> offset;
  std::vector<float> scale;
  friend bool operator==(const FeatureNorm&, const FeatureNorm&) = default;
};

struct ModelWeights {
  ModelSpec spec;
  ClassSet classes;
  std::vector<Tensor> tensors;
  std::optional<FeatureNorm> feature_norm;
  std::optional<std::string> user_id;
  nlohmann::json metadata = nlohmann::json::object();

  const Tensor& tensor(std::string_view name) const;
  Tensor& tensor(std::string_view name);

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// Throws kShape naming the first tensor that disagrees with the spec.
void validate_weights(const ModelWeights& weights);

ModelWeights zero_weights(const ModelSpec& spec);
// He-uniform kernels (fan_in = k * in / groups), zero biases.
ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed);

// "NVSD", u32 version, u32 header length, JSON header, f32 LE payloads.
std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

// True when every tensor except the head is byte-identical.
bool same_trunk(const ModelWeights& a, const ModelWeights& b);

}  // namespace nvsed
