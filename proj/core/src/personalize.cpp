#include "nvsed/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nvsed/error.hpp"
#include "nvsed/metrics.hpp"
#include "nvsed/rng.hpp"

namespace nvsed {

NegativePool make_negative_pool(const ModelWeights& weights, std::span<const LabeledClip> aggressors,
                                double seconds, std::uint64_t seed) {
  NegativePool pool;
  const auto budget = static_cast<std::size_t>(std::max(0.0, seconds) * 1000.0 / kFrameMs);
  if (budget == 0 || aggressors.empty()) return pool;
  std::vector<std::size_t> order(aggressors.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t idx : order) {
    if (pool.embeddings.rows() >= budget) break;
    const auto& clip = aggressors[idx];
    if (clip.feats.empty()) continue;
    auto emb = forward(weights, clip.feats).embeddings;
    const std::size_t take = std::min(emb.rows(), budget - pool.embeddings.rows());
    pool.embeddings.append_rows(emb.slice_rows(0, take));
  }
  return pool;
}

namespace {

struct HeadProblem {
  const Embeddings* enroll = nullptr;
  std::size_t enroll_rows = 0;
  std::vector<float> targets;  // one per enrollment row
  const Embeddings* pool = nullptr;
};

// Full-batch Adam on one head column and bias; returns the final loss.
double fit_row(const HeadProblem& prob, std::vector<double>& w, double& b, const HeadFitConfig& cfg) {
  const std::size_t n = w.size();
  const std::size_t pool_rows = prob.pool ? prob.pool->rows() : 0;
  const double count = static_cast<double>(prob.enroll_rows + pool_rows);
  std::vector<double> mw(n, 0.0), vw(n, 0.0), gw(n);
  double mb = 0.0, vb = 0.0;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  double loss = 0.0;

  for (int step = 1; step <= cfg.steps; ++step) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    loss = 0.0;
    auto visit = [&](const float* e, double y) {
      double z = b;
      for (std::size_t i = 0; i < n; ++i) z += w[i] * e[i];
      loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
      const double g = 1.0 / (1.0 + std::exp(-z)) - y;
      for (std::size_t i = 0; i < n; ++i) gw[i] += g * e[i];
      gb += g;
    };
    for (std::size_t t = 0; t < prob.enroll_rows; ++t) visit(prob.enroll->row(t).data(), prob.targets[t]);
    for (std::size_t t = 0; t < pool_rows; ++t) visit(prob.pool->row(t).data(), 0.0);
    loss /= count;

    if (best - loss < cfg.plateau_tolerance) {
      if (++stale >= cfg.patience) break;
    } else {
      stale = 0;
    }
    best = std::min(best, loss);

    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), step);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), step);
    auto update = [&](double& p, double& m, double& v, double g) {
      g /= count;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      p -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
    };
    for (std::size_t i = 0; i < n; ++i) update(w[i], mw[i], vw[i], gw[i]);
    update(b, mb, vb, gb);
  }
  return loss;
}

}  // namespace

std::size_t enrollment_frames(std::span<const Segment> segments, int shots, std::size_t total,
                              const HeadFitConfig& cfg) {
  if (segments.empty() || shots <= 0) return 0;
  const std::size_t used = std::min(segments.size(), static_cast<std::size_t>(shots));
  std::size_t end = std::min<std::size_t>(
      total, static_cast<std::size_t>(segments[used - 1].end_frame + cfg.inflate + cfg.trailing_frames + 1));
  // Never train on an unused repetition as if it were silence.
  if (used < segments.size()) {
    const int limit = std::max(segments[used].start_frame - cfg.inflate, segments[used - 1].end_frame + 1);
    end = std::min(end, static_cast<std::size_t>(limit));
  }
  return end;
}

ModelWeights fit_head(const ModelWeights& weights, const LabeledClip& enrollment, std::span<const int> classes,
                      int shots, const NegativePool* negatives, const HeadFitConfig& cfg) {
  if (shots < 0) throw Error(ErrorCode::kInvalidArgument, "shots must be non-negative");
  if (shots == 0 || classes.empty()) return weights;
  validate_weights(weights);
  const int n = weights.spec.channels;
  const int nc = weights.spec.num_classes;
  if (negatives && !negatives->embeddings.empty() &&
      negatives->embeddings.cols() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::kShape, "negative pool embeddings have the wrong width");
  }

  const Embeddings emb = forward(weights, enrollment.feats).embeddings;
  ModelWeights out = weights;
  auto& head_w = out.tensor("head.weight").data;
  auto& head_b = out.tensor("head.bias").data;
  nlohmann::json fitted = nlohmann::json::array();

  for (int cls : classes) {
    if (cls < 0 || cls >= nc) throw Error(ErrorCode::kInvalidArgument, "class index " + std::to_string(cls) + " out of range");
    std::vector<Segment> segs;
    for (const auto& s : enrollment.segments)
      if (s.label == cls) segs.push_back(s);
    std::sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) { return a.start_frame < b.start_frame; });
    if (segs.empty()) {
      throw Error(ErrorCode::kEnrollmentFailed,
                  "no usable segment for class " + weights.classes.name(cls) + " in " +
                      (enrollment.clip.source.empty() ? std::string("enrollment clip") : enrollment.clip.source) +
                      " (" + std::to_string(enrollment.segments.size()) + " segments, " +
                      std::to_string(enrollment.feats.rows()) + " frames)");
    }
    const std::size_t used = std::min(segs.size(), static_cast<std::size_t>(shots));
    const std::size_t end = enrollment_frames(segs, shots, emb.rows(), cfg);
    segs.resize(used);

    HeadProblem prob;
    prob.enroll = &emb;
    prob.enroll_rows = end;
    const Matrix<float> labels = render_frame_labels(segs, end, cfg.inflate);
    prob.targets.resize(end);
    for (std::size_t t = 0; t < end; ++t) prob.targets[t] = labels(t, cls);
    prob.pool = negatives && !negatives->embeddings.empty() ? &negatives->embeddings : nullptr;

    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = head_w[static_cast<std::size_t>(i) * nc + cls];
    double b = head_b[cls];
    const double loss = fit_row(prob, w, b, cfg);
    for (int i = 0; i < n; ++i) head_w[static_cast<std::size_t>(i) * nc + cls] = static_cast<float>(w[i]);
    head_b[cls] = static_cast<float>(b);
    fitted.push_back({{"class", weights.classes.name(cls)}, {"shots", used}, {"loss", loss}});
  }
  out.metadata["personalized"] = fitted;
  return out;
}

std::optional<double> one_active_f1(const FrameProbs& probs, const LabeledClip& clip, int cls,
                                    const PostProcConfig& config, int tolerance) {
  ClipOutcome outcome;
  outcome.events = process(probs, config.only_active(cls));
  for (const auto& s : clip.segments)
    if (s.label == cls) outcome.truth.push_back(s);
  outcome.duration_s = clip.clip.duration_seconds();
  const EvalReport report = segmental_score(std::span<const ClipOutcome>(&outcome, 1), tolerance);
  return report.per_class.at(static_cast<std::size_t>(cls)).f1();
}

PersonalizationScore evaluate_personalization(const ModelWeights& generic, const ModelWeights& personalized,
                                              const LabeledClip& heldout, int cls, const PostProcConfig& config,
                                              int tolerance) {
  if (!(generic.classes == personalized.classes)) {
    throw Error(ErrorCode::kInvalidArgument, "generic and personalized models use different class lists");
  }
  if (!is_sound_class(cls)) throw Error(ErrorCode::kInvalidArgument, "class index " + std::to_string(cls) + " is not a sound class");
  PersonalizationScore score;
  score.f1_before = one_active_f1(forward(generic, heldout.feats).probs, heldout, cls, config, tolerance);
  score.f1_after = one_active_f1(forward(personalized, heldout.feats).probs, heldout, cls, config, tolerance);
  return score;
}

}  // namespace nvsed
