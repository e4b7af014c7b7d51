#include "nvsed/tcn.hpp"

#include <algorithm>

#include "nvsed/detail/network.hpp"
#include "nvsed/error.hpp"

namespace nvsed {
namespace {

constexpr std::size_t kChunkRows = 2048;

void check_features(const ModelWeights& w, const FeatureMatrix& feats) {
  if (!feats.empty() && feats.cols() != static_cast<std::size_t>(w.spec.input_bins)) {
    throw Error(ErrorCode::kShape, "features have " + std::to_string(feats.cols()) +
                                       " bins, model expects " + std::to_string(w.spec.input_bins));
  }
}

FrameProbs logits_to_probs(Matrix<float>&& logits) {
  for (auto& v : logits.storage()) v = detail::sigmoid(v);
  return std::move(logits);
}

}  // namespace

ForwardOutput forward(const ModelWeights& weights, const FeatureMatrix& feats) {
  validate_weights(weights);
  check_features(weights, feats);
  const auto& spec = weights.spec;
  const auto params = detail::make_param_view(weights);
  detail::TrunkState<float> state(spec);
  const FeatureNorm* norm = weights.feature_norm ? &*weights.feature_norm : nullptr;

  ForwardOutput out{FrameProbs(feats.rows(), spec.num_classes), Embeddings(feats.rows(), spec.channels)};
  for (std::size_t start = 0; start < feats.rows(); start += kChunkRows) {
    const std::size_t rows = std::min(kChunkRows, feats.rows() - start);
    detail::run_chunk<float>(spec, params, norm, state, feats.data() + start * spec.input_bins, rows,
                             out.embeddings.data() + start * spec.channels,
                             out.probs.data() + start * spec.num_classes);
  }
  for (auto& v : out.probs.storage()) v = detail::sigmoid(v);
  return out;
}

FrameProbs apply_head(const ModelWeights& weights, const Embeddings& embeddings) {
  const auto& spec = weights.spec;
  if (embeddings.cols() != static_cast<std::size_t>(spec.channels) && !embeddings.empty()) {
    throw Error(ErrorCode::kShape, "embeddings have " + std::to_string(embeddings.cols()) +
                                       " channels, head expects " + std::to_string(spec.channels));
  }
  Matrix<float> logits(embeddings.rows(), spec.num_classes);
  detail::conv_forward(embeddings.data(), embeddings.rows(), spec.channels,
                       weights.tensor("head.weight").data.data(), weights.tensor("head.bias").data.data(),
                       1, 1, spec.num_classes, logits.data());
  return logits_to_probs(std::move(logits));
}

struct StreamSession::State {
  std::shared_ptr<const ModelWeights> weights;
  detail::ParamView<float> params;
  detail::TrunkState<float> trunk;
  std::size_t frames = 0;
  bool closed = false;

  explicit State(std::shared_ptr<const ModelWeights> w)
      : weights(std::move(w)), params(detail::make_param_view(*weights)), trunk(weights->spec) {}
};

StreamSession::StreamSession(std::shared_ptr<const ModelWeights> weights) {
  if (!weights) throw Error(ErrorCode::kInvalidArgument, "stream session needs weights");
  validate_weights(*weights);
  state_ = std::make_unique<State>(std::move(weights));
}

StreamSession::~StreamSession() = default;
StreamSession::StreamSession(StreamSession&&) noexcept = default;
StreamSession& StreamSession::operator=(StreamSession&&) noexcept = default;

ForwardOutput StreamSession::push(const FeatureMatrix& frames) {
  if (!state_ || state_->closed) throw Error(ErrorCode::kSessionClosed, "stream session is closed");
  const auto& w = *state_->weights;
  const auto& spec = w.spec;
  ForwardOutput out{FrameProbs(frames.rows(), spec.num_classes), Embeddings(frames.rows(), spec.channels)};
  if (frames.empty()) return out;
  check_features(w, frames);
  const FeatureNorm* norm = w.feature_norm ? &*w.feature_norm : nullptr;
  for (std::size_t start = 0; start < frames.rows(); start += kChunkRows) {
    const std::size_t rows = std::min(kChunkRows, frames.rows() - start);
    detail::run_chunk<float>(spec, state_->params, norm, state_->trunk,
                             frames.data() + start * spec.input_bins, rows,
                             out.embeddings.data() + start * spec.channels,
                             out.probs.data() + start * spec.num_classes);
  }
  for (auto& v : out.probs.storage()) v = detail::sigmoid(v);
  state_->frames += frames.rows();
  return out;
}

void StreamSession::swap_head(std::shared_ptr<const ModelWeights> weights) {
  if (!state_ || state_->closed) throw Error(ErrorCode::kSessionClosed, "stream session is closed");
  if (!weights || !same_trunk(*state_->weights, *weights)) {
    throw Error(ErrorCode::kInvalidArgument, "swap_head requires an identical trunk");
  }
  state_->weights = std::move(weights);
  state_->params = detail::make_param_view(*state_->weights);
}

const ModelWeights& StreamSession::weights() const { return *state_->weights; }
std::size_t StreamSession::frames_processed() const { return state_ ? state_->frames : 0; }

void StreamSession::close() {
  if (state_) state_->closed = true;
}

bool StreamSession::closed() const { return !state_ || state_->closed; }

}  // namespace nvsed
