#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/annotate.hpp"
#include "nvsed/error.hpp"
#include "nvsed/model.hpp"
#include "nvsed/rng.hpp"

namespace nvsed {

struct TrainConfig {
  int batch_frames = 1000;
  double aggressor_mix = 0.5;
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float dropout = 0.1f;
  int epochs = 30;
  int steps_per_epoch = 50;
  double validation_fraction = 0.1;
  int validation_batches = 6;
  std::uint64_t seed = 1;
  ModelSpec model;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Parameters (or their gradients) as flat arrays in expected_tensors order.
template <typename S>
using TensorList = std::vector<std::vector<S>>;
using Gradients = TensorList<float>;

template <typename S>
TensorList<S> tensor_list(const ModelWeights& weights);

// Mean binary cross entropy over frames and classes, from pre-sigmoid logits:
// max(z, 0) - z * y + log1p(exp(-|z|)). `frame_mask` (optional, one entry
// per row) restricts the mean to the selected rows.
template <typename S>
S bce_with_logits(const Matrix<S>& logits, const Matrix<float>& targets,
                  std::span<const std::uint8_t> frame_mask = {});

struct BackwardOptions {
  bool dropout = false;
  float dropout_rate = 0.0f;
  std::uint64_t dropout_seed = 0;
  std::span<const std::uint8_t> frame_mask;  // empty: all frames
  bool input_gradient = false;
};

template <typename S>
struct BackwardResult {
  S loss{};
  TensorList<S> grads;
  Matrix<S> input_grad;  // filled when requested (w.r.t. normalized input)
  Matrix<S> logits;
};

// Forward + exact analytic gradient of bce_with_logits w.r.t. every tensor.
// Throws kNonFinite naming the first layer with a non-finite activation.
template <typename S>
BackwardResult<S> backward(const ModelSpec& spec, const TensorList<S>& params,
                           const FeatureNorm* norm, const FeatureMatrix& feats,
                           const Matrix<float>& targets, const BackwardOptions& options = {});

// Loss of the same forward pass (same dropout masks) without gradients.
template <typename S>
S loss_only(const ModelSpec& spec, const TensorList<S>& params, const FeatureNorm* norm,
            const FeatureMatrix& feats, const Matrix<float>& targets,
            const BackwardOptions& options = {});

// A contiguous run of frames taken from one clip for a training sequence.
struct BatchPiece {
  bool aggressor = false;
  std::size_t clip = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

// Composes fixed-length training sequences: round(mix * T) frames of
// aggressor audio and the rest from mouth-sound clips, each filled with
// random crops (sampled with replacement) and shuffled together.
class BatchComposer {
 public:
  BatchComposer(std::vector<std::size_t> sound_lengths, std::vector<std::size_t> aggressor_lengths,
                int batch_frames, double aggressor_mix, std::uint64_t seed);
  std::vector<BatchPiece> next();

 private:
  void fill(std::vector<BatchPiece>& out, bool aggressor, std::size_t frames);

  std::vector<std::size_t> sound_lengths_;
  std::vector<std::size_t> aggressor_lengths_;
  int batch_frames_;
  double mix_;
  Rng rng_;
};

struct TrainingBatch {
  FeatureMatrix feats;
  Matrix<float> targets;
};

TrainingBatch assemble_batch(std::span<const BatchPiece> pieces, std::span<const LabeledClip> sounds,
                             std::span<const LabeledClip> aggressors);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct AdamState {
  std::int64_t step = 0;
  Gradients m;
  Gradients v;
};

struct TrainResult {
  ModelWeights weights;  // best by validation loss
  std::vector<EpochStats> history;
  std::vector<double> step_losses;
  int best_epoch = 0;
  AdamState optimizer;  // state at the end of training
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, ModelWeights last_good)
      : Error(ErrorCode::kDiverged, what), last_good_(std::move(last_good)) {}
  const ModelWeights& last_good() const { return last_good_; }

 private:
  ModelWeights last_good_;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Per-bin mean / inverse stddev over every frame of the given clips.
FeatureNorm fit_feature_norm(std::span<const LabeledClip> sounds,
                             std::span<const LabeledClip> aggressors);

// Adam on frame-wise BCE over mixed batches. Deterministic given cfg.seed.
TrainResult train(std::span<const LabeledClip> corpus, std::span<const LabeledClip> aggressors,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Weights file plus "<path>.train.json" (history, Adam hyperparameters and
// step) and the Adam moments as two weight-format files next to it.
void save_checkpoint(const std::filesystem::path& path, const TrainResult& result,
                     const TrainConfig& cfg);

}  // namespace nvsed
