#include "nvsed/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "nvsed/detail/layers.hpp"
#include "nvsed/detail/network.hpp"

namespace nvsed {

using detail::conv_backward;
using detail::conv_forward;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidArgument, "train config: " + what);
  };
  if (batch_frames <= 0) fail("batch_frames must be positive");
  if (!(aggressor_mix >= 0.0 && aggressor_mix <= 1.0)) fail("aggressor_mix must be in [0, 1]");
  if (!(learning_rate > 0.0f)) fail("learning_rate must be positive");
  if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) fail("betas must be in [0, 1)");
  if (!(epsilon > 0.0f)) fail("epsilon must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) fail("dropout must be in [0, 1)");
  if (epochs <= 0 || steps_per_epoch <= 0) fail("epochs and steps_per_epoch must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) fail("validation_fraction must be in [0, 1)");
  if (validation_batches < 0) fail("validation_batches must be non-negative");
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_frames", c.batch_frames},
                     {"aggressor_mix", c.aggressor_mix},
                     {"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"dropout", c.dropout},
                     {"epochs", c.epochs},
                     {"steps_per_epoch", c.steps_per_epoch},
                     {"validation_fraction", c.validation_fraction},
                     {"validation_batches", c.validation_batches},
                     {"seed", c.seed},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_frames = j.value("batch_frames", d.batch_frames);
  c.aggressor_mix = j.value("aggressor_mix", d.aggressor_mix);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.dropout = j.value("dropout", d.dropout);
  c.epochs = j.value("epochs", d.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.validation_batches = j.value("validation_batches", d.validation_batches);
  c.seed = j.value("seed", d.seed);
  c.model = j.value("model", d.model);
}

template <typename S>
TensorList<S> tensor_list(const ModelWeights& weights) {
  TensorList<S> out;
  out.reserve(weights.tensors.size());
  for (const auto& t : weights.tensors) out.emplace_back(t.data.begin(), t.data.end());
  return out;
}

namespace {

void check_targets(std::size_t rows, std::size_t cols, const Matrix<float>& targets,
                   std::span<const std::uint8_t> mask) {
  if (targets.rows() != rows || targets.cols() != cols) {
    throw Error(ErrorCode::kShape, "targets are " + std::to_string(targets.rows()) + "x" +
                                       std::to_string(targets.cols()) + ", logits are " +
                                       std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!mask.empty() && mask.size() != rows) {
    throw Error(ErrorCode::kShape, "frame mask has " + std::to_string(mask.size()) +
                                       " entries for " + std::to_string(rows) + " frames");
  }
}

std::size_t masked_rows(std::size_t rows, std::span<const std::uint8_t> mask) {
  if (mask.empty()) return rows;
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

template <typename S>
bool all_finite(const std::vector<S>& v) {
  return std::all_of(v.begin(), v.end(), [](S x) { return std::isfinite(x); });
}

template <typename S>
void require_finite(const std::vector<S>& v, const std::string& layer) {
  if (!all_finite(v)) throw Error(ErrorCode::kNonFinite, "non-finite activation in " + layer);
}

// Post-activation dropout: y = lrelu(z) * mask, mask in {0, 1 / (1 - p)}.
template <typename S>
struct ActSite {
  std::vector<S> z;
  std::vector<S> y;
  std::vector<S> mask;  // empty: no dropout
};

template <typename S>
void activate(ActSite<S>& site, S slope, const BackwardOptions& opts, Rng& rng) {
  site.y = site.z;
  detail::leaky_relu(site.y.data(), site.y.size(), slope);
  if (opts.dropout && opts.dropout_rate > 0.0f) {
    const S keep = S(1) / (S(1) - static_cast<S>(opts.dropout_rate));
    site.mask.resize(site.y.size());
    for (std::size_t i = 0; i < site.y.size(); ++i) {
      site.mask[i] = rng.bernoulli(opts.dropout_rate) ? S(0) : keep;
      site.y[i] *= site.mask[i];
    }
  }
}

// dz = dy * mask * lrelu'(z), in place on dy.
template <typename S>
void activation_grad(const ActSite<S>& site, S slope, std::vector<S>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    S g = dy[i];
    if (!site.mask.empty()) g *= site.mask[i];
    dy[i] = site.z[i] > S(0) ? g : g * slope;
  }
}

template <typename S>
std::vector<S> pad_rows(const std::vector<S>& x, int context_rows, int ch) {
  std::vector<S> out(static_cast<std::size_t>(context_rows) * ch + x.size(), S(0));
  std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(context_rows) * ch);
  return out;
}

template <typename S>
struct BlockCache {
  std::vector<S> input;   // T x N
  std::vector<S> padded;  // (T + k - 1) x N
  ActSite<S> grouped;
  ActSite<S> reduce;
};

template <typename S>
struct ForwardCache {
  std::vector<S> x_padded;
  ActSite<S> stem;
  std::vector<BlockCache<S>> blocks;
  std::vector<S> last;  // head input
  Matrix<S> logits;
};

template <typename S>
ForwardCache<S> training_forward(const ModelSpec& spec, const TensorList<S>& params,
                                 const FeatureNorm* norm, const FeatureMatrix& feats,
                                 const BackwardOptions& opts) {
  spec.validate();
  const auto infos = expected_tensors(spec);
  if (params.size() != infos.size()) {
    throw Error(ErrorCode::kShape, "expected " + std::to_string(infos.size()) + " tensors, got " +
                                       std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < infos.size(); ++i) {
    std::size_t n = 1;
    for (int d : infos[i].shape) n *= static_cast<std::size_t>(d);
    if (params[i].size() != n) throw Error(ErrorCode::kShape, "tensor " + infos[i].name + " has wrong size");
  }
  if (feats.cols() != static_cast<std::size_t>(spec.input_bins)) {
    throw Error(ErrorCode::kShape, "features have " + std::to_string(feats.cols()) + " bins, model expects " +
                                       std::to_string(spec.input_bins));
  }

  std::vector<const S*> ptrs;
  for (const auto& p : params) ptrs.push_back(p.data());
  const auto pv = detail::make_param_view<S>(spec, ptrs);

  const std::size_t rows = feats.rows();
  const int n = spec.channels;
  const int nb = spec.bottleneck_channels();
  const int k = spec.kernel;
  const S slope = static_cast<S>(spec.leaky_slope);
  Rng rng(opts.dropout_seed);

  ForwardCache<S> c;
  std::vector<S> x(rows * spec.input_bins);
  detail::normalize_features<S>(norm, feats.data(), rows, spec.input_bins, x.data());
  c.x_padded = pad_rows(x, k - 1, spec.input_bins);

  c.stem.z.resize(rows * n);
  conv_forward(c.x_padded.data(), rows, spec.input_bins, pv.stem_w, pv.stem_b, k, 1, n, c.stem.z.data());
  require_finite(c.stem.z, "stem");
  activate(c.stem, slope, opts, rng);

  std::vector<S> h = c.stem.y;
  std::vector<S> e(rows * n);
  for (int b = 0; b < spec.num_blocks; ++b) {
    const auto& bp = pv.blocks[b];
    auto& bc = c.blocks.emplace_back();
    const std::string name = "blocks." + std::to_string(b);
    bc.input = h;
    bc.padded = pad_rows(h, k - 1, n);
    bc.grouped.z.resize(rows * n);
    conv_forward(bc.padded.data(), rows, n, bp.grouped_w, bp.grouped_b, k, spec.groups, n,
                 bc.grouped.z.data());
    require_finite(bc.grouped.z, name + ".grouped");
    activate(bc.grouped, slope, opts, rng);
    bc.reduce.z.resize(rows * nb);
    conv_forward(bc.grouped.y.data(), rows, n, bp.reduce_w, bp.reduce_b, 1, 1, nb, bc.reduce.z.data());
    require_finite(bc.reduce.z, name + ".reduce");
    activate(bc.reduce, slope, opts, rng);
    conv_forward(bc.reduce.y.data(), rows, nb, bp.expand_w, bp.expand_b, 1, 1, n, e.data());
    require_finite(e, name + ".expand");
    const std::vector<S>& shortcut = spec.residual == ResidualSpan::kWholeBlock ? bc.input : bc.grouped.y;
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = shortcut[i] + e[i];
  }
  c.last = std::move(h);
  c.logits = Matrix<S>(rows, spec.num_classes);
  conv_forward(c.last.data(), rows, n, pv.head_w, pv.head_b, 1, 1, spec.num_classes, c.logits.data());
  require_finite(c.logits.storage(), "head");
  return c;
}

}  // namespace

template <typename S>
S bce_with_logits(const Matrix<S>& logits, const Matrix<float>& targets,
                  std::span<const std::uint8_t> frame_mask) {
  check_targets(logits.rows(), logits.cols(), targets, frame_mask);
  const std::size_t count = masked_rows(logits.rows(), frame_mask) * logits.cols();
  if (count == 0) return S(0);
  double sum = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (!frame_mask.empty() && !frame_mask[t]) continue;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double z = static_cast<double>(logits(t, c));
      const double y = targets(t, c);
      sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
  }
  return static_cast<S>(sum / static_cast<double>(count));
}

template <typename S>
BackwardResult<S> backward(const ModelSpec& spec, const TensorList<S>& params, const FeatureNorm* norm,
                           const FeatureMatrix& feats, const Matrix<float>& targets,
                           const BackwardOptions& opts) {
  ForwardCache<S> c = training_forward(spec, params, norm, feats, opts);
  const std::size_t rows = feats.rows();
  const int n = spec.channels;
  const int nb = spec.bottleneck_channels();
  const int k = spec.kernel;
  const int nc = spec.num_classes;
  const S slope = static_cast<S>(spec.leaky_slope);

  BackwardResult<S> r;
  r.loss = bce_with_logits(c.logits, targets, opts.frame_mask);
  if (!std::isfinite(r.loss)) throw Error(ErrorCode::kNonFinite, "non-finite loss");
  r.grads.reserve(params.size());
  for (const auto& p : params) r.grads.emplace_back(p.size(), S(0));

  std::vector<const S*> ptrs;
  for (const auto& p : params) ptrs.push_back(p.data());
  const auto pv = detail::make_param_view<S>(spec, ptrs);

  const std::size_t count = masked_rows(rows, opts.frame_mask) * static_cast<std::size_t>(nc);
  std::vector<S> dlogits(rows * nc, S(0));
  if (count > 0) {
    const S inv = S(1) / static_cast<S>(count);
    for (std::size_t t = 0; t < rows; ++t) {
      if (!opts.frame_mask.empty() && !opts.frame_mask[t]) continue;
      for (int cls = 0; cls < nc; ++cls) {
        const S z = c.logits(t, cls);
        const S p = S(1) / (S(1) + std::exp(-z));
        dlogits[t * nc + cls] = (p - static_cast<S>(targets(t, cls))) * inv;
      }
    }
  }

  const std::size_t head = params.size() - 2;
  std::vector<S> dh(rows * n, S(0));
  conv_backward(c.last.data(), rows, n, pv.head_w, 1, 1, nc, dlogits.data(), dh.data(),
                r.grads[head].data(), r.grads[head + 1].data());

  std::vector<S> dpad;
  std::vector<S> dr;
  std::vector<S> da;
  for (int b = spec.num_blocks - 1; b >= 0; --b) {
    const auto& bp = pv.blocks[b];
    const auto& bc = c.blocks[b];
    const std::size_t base = 2 + 6 * static_cast<std::size_t>(b);
    // dh is the gradient of the block output.
    dr.assign(rows * nb, S(0));
    conv_backward(bc.reduce.y.data(), rows, nb, bp.expand_w, 1, 1, n, dh.data(), dr.data(),
                  r.grads[base + 4].data(), r.grads[base + 5].data());
    activation_grad(bc.reduce, slope, dr);
    da.assign(rows * n, S(0));
    conv_backward(bc.grouped.y.data(), rows, n, bp.reduce_w, 1, 1, nb, dr.data(), da.data(),
                  r.grads[base + 2].data(), r.grads[base + 3].data());
    if (spec.residual == ResidualSpan::kBottleneck) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dh[i];
    }
    activation_grad(bc.grouped, slope, da);
    dpad.assign((rows + k - 1) * n, S(0));
    conv_backward(bc.padded.data(), rows, n, bp.grouped_w, k, spec.groups, n, da.data(), dpad.data(),
                  r.grads[base].data(), r.grads[base + 1].data());
    const S* din = dpad.data() + static_cast<std::size_t>(k - 1) * n;
    if (spec.residual == ResidualSpan::kWholeBlock) {
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += din[i];
    } else {
      std::copy(din, din + dh.size(), dh.begin());
    }
  }

  activation_grad(c.stem, slope, dh);
  S* grad_in = nullptr;
  if (opts.input_gradient) {
    dpad.assign((rows + k - 1) * spec.input_bins, S(0));
    grad_in = dpad.data();
  }
  conv_backward(c.x_padded.data(), rows, spec.input_bins, pv.stem_w, k, 1, n, dh.data(), grad_in,
                r.grads[0].data(), r.grads[1].data());
  if (opts.input_gradient) {
    r.input_grad = Matrix<S>(rows, spec.input_bins);
    std::copy(dpad.begin() + static_cast<std::ptrdiff_t>(k - 1) * spec.input_bins, dpad.end(),
              r.input_grad.data());
  }

  const auto infos = expected_tensors(spec);
  for (std::size_t i = 0; i < r.grads.size(); ++i) {
    if (!all_finite(r.grads[i])) throw Error(ErrorCode::kNonFinite, "non-finite gradient for " + infos[i].name);
  }
  r.logits = std::move(c.logits);
  return r;
}

template <typename S>
S loss_only(const ModelSpec& spec, const TensorList<S>& params, const FeatureNorm* norm,
            const FeatureMatrix& feats, const Matrix<float>& targets, const BackwardOptions& opts) {
  const auto c = training_forward(spec, params, norm, feats, opts);
  return bce_with_logits(c.logits, targets, opts.frame_mask);
}

template TensorList<float> tensor_list<float>(const ModelWeights&);
template TensorList<double> tensor_list<double>(const ModelWeights&);
template float bce_with_logits<float>(const Matrix<float>&, const Matrix<float>&, std::span<const std::uint8_t>);
template double bce_with_logits<double>(const Matrix<double>&, const Matrix<float>&, std::span<const std::uint8_t>);
template BackwardResult<float> backward<float>(const ModelSpec&, const TensorList<float>&, const FeatureNorm*,
                                               const FeatureMatrix&, const Matrix<float>&, const BackwardOptions&);
template BackwardResult<double> backward<double>(const ModelSpec&, const TensorList<double>&, const FeatureNorm*,
                                                 const FeatureMatrix&, const Matrix<float>&,
                                                 const BackwardOptions&);
template float loss_only<float>(const ModelSpec&, const TensorList<float>&, const FeatureNorm*,
                                const FeatureMatrix&, const Matrix<float>&, const BackwardOptions&);
template double loss_only<double>(const ModelSpec&, const TensorList<double>&, const FeatureNorm*,
                                  const FeatureMatrix&, const Matrix<float>&, const BackwardOptions&);

namespace {
constexpr std::size_t kMaxPieceFrames = 200;
}

BatchComposer::BatchComposer(std::vector<std::size_t> sound_lengths, std::vector<std::size_t> aggressor_lengths,
                             int batch_frames, double aggressor_mix, std::uint64_t seed)
    : sound_lengths_(std::move(sound_lengths)),
      aggressor_lengths_(std::move(aggressor_lengths)),
      batch_frames_(batch_frames),
      mix_(aggressor_mix),
      rng_(seed) {
  if (batch_frames_ <= 0) throw Error(ErrorCode::kInvalidArgument, "batch_frames must be positive");
  if (!(mix_ >= 0.0 && mix_ <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "aggressor mix must be in [0, 1]");
  auto usable = [](const std::vector<std::size_t>& v) {
    return std::any_of(v.begin(), v.end(), [](std::size_t n) { return n > 0; });
  };
  const auto agg = static_cast<std::size_t>(std::lround(mix_ * batch_frames_));
  if (agg > 0 && !usable(aggressor_lengths_)) throw Error(ErrorCode::kInvalidArgument, "no aggressor frames to sample");
  if (agg < static_cast<std::size_t>(batch_frames_) && !usable(sound_lengths_)) {
    throw Error(ErrorCode::kInvalidArgument, "no mouth-sound frames to sample");
  }
}

void BatchComposer::fill(std::vector<BatchPiece>& out, bool aggressor, std::size_t frames) {
  const auto& lengths = aggressor ? aggressor_lengths_ : sound_lengths_;
  while (frames > 0) {
    const std::size_t clip = rng_.below(lengths.size());
    if (lengths[clip] == 0) continue;
    const std::size_t len = std::min({frames, lengths[clip], kMaxPieceFrames});
    const std::size_t start = rng_.below(lengths[clip] - len + 1);
    out.push_back({aggressor, clip, start, len});
    frames -= len;
  }
}

std::vector<BatchPiece> BatchComposer::next() {
  const auto total = static_cast<std::size_t>(batch_frames_);
  const auto agg = std::min(total, static_cast<std::size_t>(std::lround(mix_ * batch_frames_)));
  std::vector<BatchPiece> pieces;
  fill(pieces, true, agg);
  fill(pieces, false, total - agg);
  for (std::size_t i = pieces.size(); i > 1; --i) std::swap(pieces[i - 1], pieces[rng_.below(i)]);
  return pieces;
}

TrainingBatch assemble_batch(std::span<const BatchPiece> pieces, std::span<const LabeledClip> sounds,
                             std::span<const LabeledClip> aggressors) {
  TrainingBatch batch;
  for (const auto& p : pieces) {
    const auto& clip = p.aggressor ? aggressors[p.clip] : sounds[p.clip];
    batch.feats.append_rows(clip.feats.slice_rows(p.start, p.start + p.length));
    batch.targets.append_rows(clip.frame_labels.slice_rows(p.start, p.start + p.length));
  }
  return batch;
}

FeatureNorm fit_feature_norm(std::span<const LabeledClip> sounds, std::span<const LabeledClip> aggressors) {
  std::size_t bins = 0;
  std::vector<double> sum;
  std::vector<double> sq;
  std::size_t count = 0;
  auto add = [&](const LabeledClip& c) {
    if (c.feats.empty()) return;
    if (bins == 0) {
      bins = c.feats.cols();
      sum.assign(bins, 0.0);
      sq.assign(bins, 0.0);
    }
    for (std::size_t t = 0; t < c.feats.rows(); ++t) {
      for (std::size_t b = 0; b < bins; ++b) {
        const double x = c.feats(t, b);
        sum[b] += x;
        sq[b] += x * x;
      }
    }
    count += c.feats.rows();
  };
  for (const auto& c : sounds) add(c);
  for (const auto& c : aggressors) add(c);
  if (count == 0) throw Error(ErrorCode::kInvalidArgument, "no frames to fit feature normalization");
  FeatureNorm norm;
  for (std::size_t b = 0; b < bins; ++b) {
    const double mean = sum[b] / static_cast<double>(count);
    const double var = std::max(0.0, sq[b] / static_cast<double>(count) - mean * mean);
    norm.offset.push_back(static_cast<float>(mean));
    norm.scale.push_back(static_cast<float>(1.0 / std::max(std::sqrt(var), 1e-3)));
  }
  return norm;
}

namespace {

struct Split {
  std::vector<LabeledClip> train_sounds;
  std::vector<LabeledClip> val_sounds;
  std::vector<LabeledClip> train_aggressors;
  std::vector<LabeledClip> val_aggressors;
};

// Holds out whole users (and a matching share of aggressor clips).
Split split_validation(std::span<const LabeledClip> corpus, std::span<const LabeledClip> aggressors,
                       double fraction, std::uint64_t seed) {
  Split s;
  std::set<std::string> user_set;
  for (const auto& c : corpus) user_set.insert(c.user);
  std::vector<std::string> users(user_set.begin(), user_set.end());
  Rng rng(seed);
  for (std::size_t i = users.size(); i > 1; --i) std::swap(users[i - 1], users[rng.below(i)]);
  auto held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(users.size())));
  if (fraction > 0.0 && held == 0 && users.size() > 1) held = 1;
  held = std::min(held, users.size() > 0 ? users.size() - 1 : 0);
  const std::set<std::string> val_users(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(held));
  for (const auto& c : corpus) (val_users.count(c.user) ? s.val_sounds : s.train_sounds).push_back(c);

  std::vector<std::size_t> order(aggressors.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  auto held_agg = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(order.size())));
  held_agg = std::min(held_agg, order.size() > 0 ? order.size() - 1 : 0);
  if (held == 0) held_agg = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < held_agg ? s.val_aggressors : s.train_aggressors).push_back(aggressors[order[i]]);
  }
  return s;
}

std::vector<std::size_t> lengths_of(const std::vector<LabeledClip>& clips) {
  std::vector<std::size_t> out;
  for (const auto& c : clips) out.push_back(c.feats.rows());
  return out;
}

ModelWeights to_weights(const ModelWeights& like, const Gradients& params) {
  ModelWeights w = like;
  for (std::size_t i = 0; i < params.size(); ++i) w.tensors[i].data = params[i];
  return w;
}

}  // namespace

TrainResult train(std::span<const LabeledClip> corpus, std::span<const LabeledClip> aggressors,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "training corpus is empty");

  Split split = split_validation(corpus, aggressors, cfg.validation_fraction, derive_seed(cfg.seed, 1));
  const double mix = split.train_aggressors.empty() ? 0.0 : cfg.aggressor_mix;

  ModelSpec spec = cfg.model;
  spec.dropout = cfg.dropout;
  ModelWeights weights = init_weights(spec, derive_seed(cfg.seed, 2));
  weights.feature_norm = fit_feature_norm(split.train_sounds, split.train_aggressors);
  weights.metadata["trained"] = {{"seed", cfg.seed}, {"aggressor_mix", mix}};
  const FeatureNorm* norm = &*weights.feature_norm;

  std::vector<TrainingBatch> val_batches;
  if (!split.val_sounds.empty()) {
    const auto& val_agg = split.val_aggressors.empty() ? split.train_aggressors : split.val_aggressors;
    BatchComposer vc(lengths_of(split.val_sounds), lengths_of(val_agg), cfg.batch_frames, mix,
                     derive_seed(cfg.seed, 3));
    for (int i = 0; i < cfg.validation_batches; ++i) {
      val_batches.push_back(assemble_batch(vc.next(), split.val_sounds, val_agg));
    }
  }

  BatchComposer composer(lengths_of(split.train_sounds), lengths_of(split.train_aggressors), cfg.batch_frames,
                         mix, derive_seed(cfg.seed, 4));
  Gradients params = tensor_list<float>(weights);
  TrainResult result;
  result.optimizer.m.reserve(params.size());
  for (const auto& p : params) {
    result.optimizer.m.emplace_back(p.size(), 0.0f);
    result.optimizer.v.emplace_back(p.size(), 0.0f);
  }
  auto& adam = result.optimizer;
  double best = std::numeric_limits<double>::infinity();
  result.weights = weights;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const TrainingBatch batch = assemble_batch(composer.next(), split.train_sounds, split.train_aggressors);
      BackwardOptions opts;
      opts.dropout = cfg.dropout > 0.0f;
      opts.dropout_rate = cfg.dropout;
      opts.dropout_seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(adam.step));
      BackwardResult<float> br;
      try {
        br = backward<float>(spec, params, norm, batch.feats, batch.targets, opts);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw TrainingDiverged("training diverged at step " + std::to_string(adam.step) + ": " + e.what(),
                               to_weights(weights, params));
      }
      ++adam.step;
      const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(adam.step));
      const float step_size = static_cast<float>(cfg.learning_rate / bc1);
      const float v_scale = static_cast<float>(1.0 / std::sqrt(bc2));
      for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = params[t];
        auto& m = adam.m[t];
        auto& v = adam.v[t];
        const auto& g = br.grads[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
          v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
          p[i] -= step_size * m[i] / (std::sqrt(v[i]) * v_scale + cfg.epsilon);
        }
      }
      result.step_losses.push_back(br.loss);
      epoch_loss += br.loss;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / cfg.steps_per_epoch;
    if (val_batches.empty()) {
      stats.validation_loss = stats.train_loss;
    } else {
      double sum = 0.0;
      for (const auto& vb : val_batches) sum += loss_only<float>(spec, params, norm, vb.feats, vb.targets);
      stats.validation_loss = sum / static_cast<double>(val_batches.size());
    }
    if (!std::isfinite(stats.validation_loss) || !std::isfinite(stats.train_loss)) {
      throw TrainingDiverged("loss became non-finite in epoch " + std::to_string(epoch), result.weights);
    }
    result.history.push_back(stats);
    if (stats.validation_loss < best) {
      best = stats.validation_loss;
      result.best_epoch = epoch;
      result.weights = to_weights(weights, params);
    }
    if (on_epoch) on_epoch(stats);
  }
  result.weights.metadata["trained"]["best_epoch"] = result.best_epoch;
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const TrainResult& result, const TrainConfig& cfg) {
  save_weights(result.weights, path);
  const auto moment_path = [&](const char* suffix) {
    auto p = path;
    p += suffix;
    return p;
  };
  const auto m_path = moment_path(".adam_m.nvsd");
  const auto v_path = moment_path(".adam_v.nvsd");
  if (!result.optimizer.m.empty()) {
    ModelWeights m = to_weights(result.weights, result.optimizer.m);
    m.feature_norm.reset();
    m.metadata = {{"role", "adam_first_moment"}};
    save_weights(m, m_path);
    ModelWeights v = to_weights(result.weights, result.optimizer.v);
    v.feature_norm.reset();
    v.metadata = {{"role", "adam_second_moment"}};
    save_weights(v, v_path);
  }

  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : result.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"validation_loss", h.validation_loss}});
  }
  nlohmann::json sidecar = {
      {"config", cfg},
      {"history", history},
      {"best_epoch", result.best_epoch},
      {"optimizer",
       {{"name", "adam"},
        {"step", result.optimizer.step},
        {"learning_rate", cfg.learning_rate},
        {"beta1", cfg.beta1},
        {"beta2", cfg.beta2},
        {"epsilon", cfg.epsilon},
        {"first_moment", m_path.filename().string()},
        {"second_moment", v_path.filename().string()}}}};
  auto side = path;
  side += ".train.json";
  std::ofstream out(side);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + side.string());
  out << sidecar.dump(2) << "\n";
}

}  // namespace nvsed
