#pragma once

// Convolution and activation primitives shared by inference, streaming
// inference and training. Every output element is accumulated in the same
// order (bias, then tap-major, input-channel-minor) regardless of how many
// rows are processed per call, which is what makes chunked and batch
// inference bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace nvsed::detail {

// `in` holds out_rows + k - 1 rows of in_ch values; kernel layout is
// [k][in_ch / groups][out_ch].
template <typename S>
void conv_forward(const S* __restrict in, std::size_t out_rows, int in_ch,
                  const S* __restrict weight, const S* __restrict bias, int k,
                  int groups, int out_ch, S* __restrict out) {
  const int ipg = in_ch / groups;
  const int opg = out_ch / groups;
  constexpr std::size_t kBlock = 4;
  std::size_t t0 = 0;
  for (; t0 + kBlock <= out_rows; t0 += kBlock) {
    S* o0 = out + t0 * out_ch;
    S* o1 = o0 + out_ch;
    S* o2 = o1 + out_ch;
    S* o3 = o2 + out_ch;
    for (int o = 0; o < out_ch; ++o) o0[o] = o1[o] = o2[o] = o3[o] = bias[o];
    for (int j = 0; j < k; ++j) {
      const S* x0 = in + (t0 + j) * in_ch;
      const S* x1 = x0 + in_ch;
      const S* x2 = x1 + in_ch;
      const S* x3 = x2 + in_ch;
      for (int g = 0; g < groups; ++g) {
        S* __restrict p0 = o0 + g * opg;
        S* __restrict p1 = o1 + g * opg;
        S* __restrict p2 = o2 + g * opg;
        S* __restrict p3 = o3 + g * opg;
        for (int i = 0; i < ipg; ++i) {
          const S* __restrict wr = weight + (static_cast<std::size_t>(j) * ipg + i) * out_ch + g * opg;
          const S a0 = x0[g * ipg + i];
          const S a1 = x1[g * ipg + i];
          const S a2 = x2[g * ipg + i];
          const S a3 = x3[g * ipg + i];
          for (int o = 0; o < opg; ++o) {
            const S wv = wr[o];
            p0[o] += a0 * wv;
            p1[o] += a1 * wv;
            p2[o] += a2 * wv;
            p3[o] += a3 * wv;
          }
        }
      }
    }
  }
  for (; t0 < out_rows; ++t0) {
    S* o0 = out + t0 * out_ch;
    for (int o = 0; o < out_ch; ++o) o0[o] = bias[o];
    for (int j = 0; j < k; ++j) {
      const S* x0 = in + (t0 + j) * in_ch;
      for (int g = 0; g < groups; ++g) {
        S* __restrict p0 = o0 + g * opg;
        for (int i = 0; i < ipg; ++i) {
          const S* __restrict wr = weight + (static_cast<std::size_t>(j) * ipg + i) * out_ch + g * opg;
          const S a0 = x0[g * ipg + i];
          for (int o = 0; o < opg; ++o) p0[o] += a0 * wr[o];
        }
      }
    }
  }
}

// Accumulates into grad_weight / grad_bias, and into grad_in (out_rows + k - 1
// rows) when it is non-null.
template <typename S>
void conv_backward(const S* __restrict in, std::size_t out_rows, int in_ch,
                   const S* __restrict weight, int k, int groups, int out_ch,
                   const S* __restrict grad_out, S* __restrict grad_in,
                   S* __restrict grad_weight, S* __restrict grad_bias) {
  const int ipg = in_ch / groups;
  const int opg = out_ch / groups;

  for (std::size_t t = 0; t < out_rows; ++t) {
    const S* go = grad_out + t * out_ch;
    for (int o = 0; o < out_ch; ++o) grad_bias[o] += go[o];
  }

  constexpr std::size_t kBlock = 4;
  std::size_t t0 = 0;
  for (; t0 + kBlock <= out_rows; t0 += kBlock) {
    const S* g0 = grad_out + t0 * out_ch;
    const S* g1 = g0 + out_ch;
    const S* g2 = g1 + out_ch;
    const S* g3 = g2 + out_ch;
    for (int j = 0; j < k; ++j) {
      const S* x0 = in + (t0 + j) * in_ch;
      const S* x1 = x0 + in_ch;
      const S* x2 = x1 + in_ch;
      const S* x3 = x2 + in_ch;
      for (int g = 0; g < groups; ++g) {
        for (int i = 0; i < ipg; ++i) {
          S* __restrict gw = grad_weight + (static_cast<std::size_t>(j) * ipg + i) * out_ch + g * opg;
          const S a0 = x0[g * ipg + i];
          const S a1 = x1[g * ipg + i];
          const S a2 = x2[g * ipg + i];
          const S a3 = x3[g * ipg + i];
          const S* q0 = g0 + g * opg;
          const S* q1 = g1 + g * opg;
          const S* q2 = g2 + g * opg;
          const S* q3 = g3 + g * opg;
          for (int o = 0; o < opg; ++o)
            gw[o] += a0 * q0[o] + a1 * q1[o] + a2 * q2[o] + a3 * q3[o];
        }
      }
    }
  }
  for (; t0 < out_rows; ++t0) {
    const S* g0 = grad_out + t0 * out_ch;
    for (int j = 0; j < k; ++j) {
      const S* x0 = in + (t0 + j) * in_ch;
      for (int g = 0; g < groups; ++g) {
        for (int i = 0; i < ipg; ++i) {
          S* __restrict gw = grad_weight + (static_cast<std::size_t>(j) * ipg + i) * out_ch + g * opg;
          const S a0 = x0[g * ipg + i];
          const S* q0 = g0 + g * opg;
          for (int o = 0; o < opg; ++o) gw[o] += a0 * q0[o];
        }
      }
    }
  }

  if (grad_in == nullptr) return;

  // Kernel transposed to [k][out_ch][ipg] so the input-gradient update is a
  // contiguous axpy per output channel.
  std::vector<S> wt(static_cast<std::size_t>(k) * out_ch * ipg);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < ipg; ++i)
      for (int o = 0; o < out_ch; ++o)
        wt[(static_cast<std::size_t>(j) * out_ch + o) * ipg + i] =
            weight[(static_cast<std::size_t>(j) * ipg + i) * out_ch + o];

  for (std::size_t t = 0; t < out_rows; ++t) {
    const S* go = grad_out + t * out_ch;
    for (int j = 0; j < k; ++j) {
      S* gi_row = grad_in + (t + j) * in_ch;
      for (int g = 0; g < groups; ++g) {
        S* __restrict gi = gi_row + g * ipg;
        for (int oo = 0; oo < opg; ++oo) {
          const int o = g * opg + oo;
          const S gv = go[o];
          const S* __restrict wr = wt.data() + (static_cast<std::size_t>(j) * out_ch + o) * ipg;
          for (int i = 0; i < ipg; ++i) gi[i] += gv * wr[i];
        }
      }
    }
  }
}

template <typename S>
void leaky_relu(S* x, std::size_t n, S slope) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > S(0) ? x[i] : x[i] * slope;
}

// Sigmoid kept inside the open interval (0, 1).
template <typename S>
S sigmoid(S z) {
  const S p = S(1) / (S(1) + std::exp(-z));
  constexpr S lo = std::numeric_limits<S>::min();
  constexpr S hi = S(1) - std::numeric_limits<S>::epsilon() / S(2);
  return std::clamp(p, lo, hi);
}

}  // namespace nvsed::detail
