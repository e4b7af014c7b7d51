#pragma once

// Evaluation workflows shared by the CLI, the tests and the acceptance
// suite: scoring clips with a model, one-active / all-active reports, the
// shifted-user personalization cohort and the label-swap audit experiment.

#include <cstdint>
#include <span>
#include <vector>

#include "nvsed/annotate.hpp"
#include "nvsed/events.hpp"
#include "nvsed/metrics.hpp"
#include "nvsed/model.hpp"
#include "nvsed/personalize.hpp"
#include "nvsed/synthbench.hpp"

namespace nvsed {

std::vector<ScoredClip> score_clips(const ModelWeights& weights, std::span<const LabeledClip> clips);

// Classes with at least one truth segment, ascending.
std::vector<int> classes_in(std::span<const ScoredClip> clips);

// All-active: `config` as given. One-active: every class of `classes` (empty
// means classes_in(clips)) is scored in its own pass with only that class
// enabled against its own truth; counts, latencies and FP rates are pooled.
EvalReport evaluate(std::span<const ScoredClip> clips, const PostProcConfig& config, bool one_active,
                    std::span<const int> classes = {}, int tolerance = kLabelInflation);

// Events per hour over clips that contain no sounds.
double false_positives_per_hour(std::span<const ScoredClip> aggressors, const PostProcConfig& config);

struct CohortOptions {
  int users = 20;
  std::uint64_t seed = 31337;
  std::vector<int> shots{1, 3, 5};
  int heldout_repetitions = 10;
  int enroll_repetitions = 5;
  double negative_seconds = 60.0;
  double aggressor_seconds = 120.0;
  int max_candidates = 400;  // shifted users tried before giving up
  HeadFitConfig head_fit;
};

struct CohortPair {
  std::string user;
  int cls = -1;
  double f1_before = 0.0;
  std::vector<double> f1_after;  // one per shots entry
};

struct CohortResult {
  int users = 0;
  int candidates = 0;
  std::vector<CohortPair> pairs;
  std::vector<int> shots;
  std::vector<int> rescued;                // per shots entry
  std::vector<double> mean_improvement;    // mean of f1_after - f1_before

  double rescued_fraction(std::size_t shot_index) const;
};

// Draws shifted users until `users` of them have at least one class whose
// generic one-active F1 on a held-out clip is below 0.5, then fine-tunes the
// head on a separate enrollment clip of each failing class.
CohortResult run_personalization_cohort(const ModelWeights& weights, const SynthSpec& spec,
                                        const PostProcConfig& config, const CohortOptions& options = {});

struct SwapExperiment {
  std::vector<std::size_t> swapped;  // clip indices whose label was changed
  std::vector<std::size_t> flagged;  // clip indices the audit flagged
  std::size_t recovered = 0;         // swapped and flagged
  AuditReport report;

  double recall() const;
  double precision() const;
};

// Reassigns round(fraction * n) seeded sound clips to a different class of
// `classes` (segments keep their positions), returning the changed indices.
std::vector<std::size_t> inject_label_swaps(std::vector<LabeledClip>& clips, std::span<const int> classes,
                                            double fraction, std::uint64_t seed);

SwapExperiment run_swap_audit(const ModelWeights& weights, std::vector<LabeledClip> clips,
                              std::span<const int> classes, double fraction, std::uint64_t seed);

}  // namespace nvsed
