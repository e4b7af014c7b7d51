#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "nvsed/annotate.hpp"
#include "nvsed/events.hpp"
#include "nvsed/model.hpp"
#include "nvsed/tcn.hpp"

namespace nvsed {

struct HeadFitConfig {
  int steps = 200;
  float learning_rate = 1e-2f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  // Early stop once the loss improved by less than this for `patience` steps.
  double plateau_tolerance = 1e-5;
  int patience = 20;
  int inflate = kLabelInflation;
  // Silence frames kept after the last enrollment shot.
  int trailing_frames = 50;
};

// Frozen-trunk embeddings of aggressor audio used as extra negatives.
struct NegativePool {
  Embeddings embeddings;
};

// Up to `seconds` of aggressor frames, sampled deterministically by seed.
NegativePool make_negative_pool(const ModelWeights& weights, std::span<const LabeledClip> aggressors,
                                double seconds, std::uint64_t seed);

// Frames of an enrollment recording used for fitting: up to the trailing
// silence after the `shots`-th segment (segments sorted, one class), stopping
// short of the next repetition's inflated margin.
std::size_t enrollment_frames(std::span<const Segment> segments, int shots, std::size_t total,
                              const HeadFitConfig& cfg = {});

// Fine-tunes only the head rows (kernel column + bias) of `classes` by
// full-batch Adam on frame-wise BCE over frozen embeddings. Positives are the
// inflated frames of the first `shots` enrollment segments of each class;
// negatives are the remaining silence of the enrollment clip plus the pool.
// shots == 0 returns the weights unchanged. Throws kEnrollmentFailed when a
// class has no usable segment.
ModelWeights fit_head(const ModelWeights& weights, const LabeledClip& enrollment,
                      std::span<const int> classes, int shots, const NegativePool* negatives,
                      const HeadFitConfig& cfg = {});

struct PersonalizationScore {
  std::optional<double> f1_before;
  std::optional<double> f1_after;
};

// Scores both models on the held-out clip with only `cls` active and the
// same post-processing config.
PersonalizationScore evaluate_personalization(const ModelWeights& generic,
                                              const ModelWeights& personalized,
                                              const LabeledClip& heldout, int cls,
                                              const PostProcConfig& config,
                                              int tolerance = kLabelInflation);

// F1 of precomputed probabilities on `clip` (truth = clip.segments) with only
// `cls` active.
std::optional<double> one_active_f1(const FrameProbs& probs, const LabeledClip& clip, int cls,
                                    const PostProcConfig& config, int tolerance = kLabelInflation);

}  // namespace nvsed
