#pragma once

// Chunked, stateful evaluation of the TCN. Batch inference is one chunk
// with zeroed context; streaming feeds successive chunks through the same
// code, so the two agree bit for bit.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "nvsed/detail/layers.hpp"
#include "nvsed/matrix.hpp"
#include "nvsed/model.hpp"

namespace nvsed::detail {

template <typename S>
struct BlockParams {
  const S* grouped_w;
  const S* grouped_b;
  const S* reduce_w;
  const S* reduce_b;
  const S* expand_w;
  const S* expand_b;
};

template <typename S>
struct ParamView {
  const S* stem_w = nullptr;
  const S* stem_b = nullptr;
  std::vector<BlockParams<S>> blocks;
  const S* head_w = nullptr;
  const S* head_b = nullptr;
};

// `tensors` must follow expected_tensors(spec) order.
template <typename S>
ParamView<S> make_param_view(const ModelSpec& spec, std::span<const S* const> tensors) {
  ParamView<S> view;
  std::size_t n = 0;
  view.stem_w = tensors[n++];
  view.stem_b = tensors[n++];
  for (int b = 0; b < spec.num_blocks; ++b) {
    BlockParams<S> bp{};
    bp.grouped_w = tensors[n++];
    bp.grouped_b = tensors[n++];
    bp.reduce_w = tensors[n++];
    bp.reduce_b = tensors[n++];
    bp.expand_w = tensors[n++];
    bp.expand_b = tensors[n++];
    view.blocks.push_back(bp);
  }
  view.head_w = tensors[n++];
  view.head_b = tensors[n++];
  return view;
}

inline ParamView<float> make_param_view(const ModelWeights& w) {
  std::vector<const float*> ptrs;
  ptrs.reserve(w.tensors.size());
  for (const auto& t : w.tensors) ptrs.push_back(t.data.data());
  return make_param_view<float>(w.spec, ptrs);
}

// Left context (k - 1 rows) of every k > 1 convolution.
template <typename S>
struct TrunkState {
  Matrix<S> stem_context;
  std::vector<Matrix<S>> block_context;

  explicit TrunkState(const ModelSpec& spec)
      : stem_context(spec.kernel - 1, spec.input_bins),
        block_context(spec.num_blocks, Matrix<S>(spec.kernel - 1, spec.channels)) {}
};

// Prepends `context` to `rows` (in a scratch buffer) and stores the new
// trailing context back.
template <typename S>
const S* with_context(Matrix<S>& context, const S* rows, std::size_t n, int ch,
                      std::vector<S>& scratch) {
  const std::size_t ctx_rows = context.rows();
  scratch.resize((ctx_rows + n) * ch);
  std::copy(context.data(), context.data() + ctx_rows * ch, scratch.begin());
  std::copy(rows, rows + n * ch, scratch.begin() + ctx_rows * ch);
  std::copy(scratch.end() - static_cast<std::ptrdiff_t>(ctx_rows * ch), scratch.end(), context.data());
  return scratch.data();
}

template <typename S>
void normalize_features(const FeatureNorm* norm, const float* feats, std::size_t rows,
                        int bins, S* out) {
  for (std::size_t t = 0; t < rows; ++t) {
    for (int b = 0; b < bins; ++b) {
      const S x = static_cast<S>(feats[t * bins + b]);
      out[t * bins + b] =
          norm ? (x - static_cast<S>(norm->offset[b])) * static_cast<S>(norm->scale[b]) : x;
    }
  }
}

// Runs `rows` new feature frames through the trunk, writing embeddings
// (rows x N) and head logits (rows x C).
template <typename S>
void run_chunk(const ModelSpec& spec, const ParamView<S>& p, const FeatureNorm* norm,
               TrunkState<S>& state, const float* feats, std::size_t rows, S* embeddings,
               S* logits) {
  if (rows == 0) return;
  const int n = spec.channels;
  const int nb = spec.bottleneck_channels();
  const int k = spec.kernel;
  const S slope = static_cast<S>(spec.leaky_slope);

  std::vector<S> x(rows * spec.input_bins);
  normalize_features<S>(norm, feats, rows, spec.input_bins, x.data());

  std::vector<S> scratch;
  std::vector<S> h(rows * n);
  std::vector<S> a(rows * n);
  std::vector<S> r(rows * nb);
  std::vector<S> e(rows * n);

  const S* padded = with_context(state.stem_context, x.data(), rows, spec.input_bins, scratch);
  conv_forward(padded, rows, spec.input_bins, p.stem_w, p.stem_b, k, 1, n, h.data());
  leaky_relu(h.data(), h.size(), slope);

  for (int b = 0; b < spec.num_blocks; ++b) {
    const auto& bp = p.blocks[b];
    padded = with_context(state.block_context[b], h.data(), rows, n, scratch);
    conv_forward(padded, rows, n, bp.grouped_w, bp.grouped_b, k, spec.groups, n, a.data());
    leaky_relu(a.data(), a.size(), slope);
    conv_forward(a.data(), rows, n, bp.reduce_w, bp.reduce_b, 1, 1, nb, r.data());
    leaky_relu(r.data(), r.size(), slope);
    conv_forward(r.data(), rows, nb, bp.expand_w, bp.expand_b, 1, 1, n, e.data());
    const S* shortcut = spec.residual == ResidualSpan::kWholeBlock ? h.data() : a.data();
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = shortcut[i] + e[i];
  }

  std::copy(h.begin(), h.end(), embeddings);
  conv_forward(h.data(), rows, n, p.head_w, p.head_b, 1, 1, spec.num_classes, logits);
}

}  // namespace nvsed::detail
