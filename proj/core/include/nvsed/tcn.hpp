#pragma once

#include <cstddef>
#include <memory>

#include "nvsed/frontend.hpp"
#include "nvsed/matrix.hpp"
#include "nvsed/model.hpp"

namespace nvsed {

// Per-frame class probabilities (T x C), each strictly inside (0, 1).
using FrameProbs = Matrix<float>;
// Activations of the last residual block (T x N), the head's input.
using Embeddings = Matrix<float>;

struct ForwardOutput {
  FrameProbs probs;
  Embeddings embeddings;
};

// Causal inference: row t depends only on feature rows [t - 24, t] for the
// default spec (zero left padding). Throws kShape on mismatched inputs.
ForwardOutput forward(const ModelWeights& weights, const FeatureMatrix& feats);

// sigmoid(embeddings * head_kernel + head_bias), evaluated exactly as the
// forward pass does it.
FrameProbs apply_head(const ModelWeights& weights, const Embeddings& embeddings);

// Incremental inference over successive feature chunks. Concatenated
// outputs equal forward() over the concatenated input, bit for bit.
// Not thread-safe; one session per stream.
class StreamSession {
 public:
  explicit StreamSession(std::shared_ptr<const ModelWeights> weights);
  ~StreamSession();
  StreamSession(StreamSession&&) noexcept;
  StreamSession& operator=(StreamSession&&) noexcept;

  ForwardOutput push(const FeatureMatrix& frames);

  // Replaces the weights; the trunk must be byte-identical (head-only
  // personalization), so buffered context stays valid.
  void swap_head(std::shared_ptr<const ModelWeights> weights);

  const ModelWeights& weights() const;
  std::size_t frames_processed() const;
  void close();
  bool closed() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace nvsed
