#include "nvsed/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "nvsed/error.hpp"
#include "nvsed/rng.hpp"

namespace nvsed {

std::vector<ScoredClip> score_clips(const ModelWeights& weights, std::span<const LabeledClip> clips) {
  std::vector<ScoredClip> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back({forward(weights, c.feats).probs, c.segments, c.clip.duration_seconds()});
  return out;
}

std::vector<int> classes_in(std::span<const ScoredClip> clips) {
  std::array<bool, kNumSoundClasses> seen{};
  for (const auto& clip : clips)
    for (const auto& s : clip.truth)
      if (is_sound_class(s.label)) seen[s.label] = true;
  std::vector<int> out;
  for (int c = 0; c < kNumSoundClasses; ++c)
    if (seen[c]) out.push_back(c);
  return out;
}

EvalReport evaluate(std::span<const ScoredClip> clips, const PostProcConfig& config, bool one_active,
                    std::span<const int> classes, int tolerance) {
  std::vector<ClipOutcome> outcomes;
  if (!one_active) {
    for (const auto& clip : clips) outcomes.push_back({process(clip.probs, config), clip.truth, clip.duration_s});
    return segmental_score(outcomes, tolerance);
  }
  std::vector<int> cls(classes.begin(), classes.end());
  if (cls.empty()) cls = classes_in(clips);
  for (std::size_t k = 0; k < cls.size(); ++k) {
    const PostProcConfig only = config.only_active(cls[k]);
    for (const auto& clip : clips) {
      ClipOutcome o;
      o.events = process(clip.probs, only);
      for (const auto& s : clip.truth)
        if (s.label == cls[k]) o.truth.push_back(s);
      // Each clip's duration is counted once across the passes.
      o.duration_s = k == 0 ? clip.duration_s : 0.0;
      outcomes.push_back(std::move(o));
    }
  }
  return segmental_score(outcomes, tolerance);
}

double false_positives_per_hour(std::span<const ScoredClip> aggressors, const PostProcConfig& config) {
  std::vector<Event> events;
  double seconds = 0.0;
  for (const auto& clip : aggressors) {
    auto e = process(clip.probs, config);
    events.insert(events.end(), e.begin(), e.end());
    seconds += clip.duration_s;
  }
  return fp_per_hour(events, seconds).overall;
}

double CohortResult::rescued_fraction(std::size_t shot_index) const {
  if (pairs.empty()) return 0.0;
  return static_cast<double>(rescued.at(shot_index)) / static_cast<double>(pairs.size());
}

CohortResult run_personalization_cohort(const ModelWeights& weights, const SynthSpec& spec,
                                        const PostProcConfig& config, const CohortOptions& options) {
  CohortResult result;
  result.shots = options.shots;
  result.rescued.assign(options.shots.size(), 0);
  result.mean_improvement.assign(options.shots.size(), 0.0);

  const auto aggressors = synth_aggressors(options.aggressor_seconds, spec.aggressor_clip_seconds,
                                           derive_seed(options.seed, 1));
  const NegativePool pool = make_negative_pool(weights, aggressors, options.negative_seconds,
                                               derive_seed(options.seed, 2));
  const std::vector<int> cls = synth_class_indices(spec);

  for (int u = 0; result.users < options.users && u < options.max_candidates; ++u) {
    ++result.candidates;
    const std::uint64_t useed = derive_seed(options.seed, 1000 + static_cast<std::uint64_t>(u));
    UserProfile user = make_user(spec, useed, true);
    user.id = "shifted_u" + std::to_string(u);
    std::vector<CohortPair> failing;
    std::vector<LabeledClip> heldout;
    for (std::size_t s = 0; s < cls.size(); ++s) {
      heldout.push_back(synth_sound_clip(spec, user, static_cast<int>(s), options.heldout_repetitions,
                                         derive_seed(useed, 100 + s)));
      const auto probs = forward(weights, heldout.back().feats).probs;
      const double f1 = one_active_f1(probs, heldout.back(), cls[s], config).value_or(0.0);
      if (f1 < 0.5) failing.push_back({user.id, static_cast<int>(s), f1, {}});
    }
    if (failing.empty()) continue;
    ++result.users;
    for (auto& pair : failing) {
      const int slot = pair.cls;
      const LabeledClip enroll = synth_sound_clip(spec, user, slot, options.enroll_repetitions,
                                                  derive_seed(useed, 200 + static_cast<std::uint64_t>(slot)));
      const std::array<int, 1> target{cls[slot]};
      for (std::size_t i = 0; i < options.shots.size(); ++i) {
        const ModelWeights personalized = fit_head(weights, enroll, target, options.shots[i], &pool, options.head_fit);
        const auto score = evaluate_personalization(weights, personalized, heldout[slot], cls[slot], config);
        const double after = score.f1_after.value_or(0.0);
        pair.f1_after.push_back(after);
        if (detection_success(after)) ++result.rescued[i];
        result.mean_improvement[i] += after - pair.f1_before;
      }
      pair.cls = cls[slot];
      result.pairs.push_back(std::move(pair));
    }
  }
  if (!result.pairs.empty()) {
    for (auto& m : result.mean_improvement) m /= static_cast<double>(result.pairs.size());
  }
  return result;
}

double SwapExperiment::recall() const {
  return swapped.empty() ? 1.0 : static_cast<double>(recovered) / static_cast<double>(swapped.size());
}

double SwapExperiment::precision() const {
  return flagged.empty() ? 1.0 : static_cast<double>(recovered) / static_cast<double>(flagged.size());
}

std::vector<std::size_t> inject_label_swaps(std::vector<LabeledClip>& clips, std::span<const int> classes,
                                            double fraction, std::uint64_t seed) {
  if (classes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "label swaps need at least two classes");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "swap fraction must be in [0, 1]");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (is_sound_class(clips[i].clip_class)) candidates.push_back(i);
  Rng rng(seed);
  for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng.below(i)]);
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  for (std::size_t idx : candidates) {
    auto& clip = clips[idx];
    std::vector<int> others;
    for (int c : classes)
      if (c != clip.clip_class) others.push_back(c);
    const int to = others[rng.below(others.size())];
    clip.clip_class = to;
    for (auto& s : clip.segments) s.label = to;
    clip.frame_labels = render_frame_labels(clip.segments, clip.feats.rows(), kLabelInflation);
  }
  return candidates;
}

SwapExperiment run_swap_audit(const ModelWeights& weights, std::vector<LabeledClip> clips,
                              std::span<const int> classes, double fraction, std::uint64_t seed) {
  SwapExperiment ex;
  ex.swapped = inject_label_swaps(clips, classes, fraction, seed);
  ex.report = audit_labels(weights, clips);
  for (const auto& e : ex.report.flagged) ex.flagged.push_back(e.clip_index);
  std::sort(ex.flagged.begin(), ex.flagged.end());
  for (std::size_t idx : ex.swapped)
    if (std::binary_search(ex.flagged.begin(), ex.flagged.end(), idx)) ++ex.recovered;
  return ex;
}

}  // namespace nvsed
