#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/annotate.hpp"
#include "nvsed/classes.hpp"
#include "nvsed/tcn.hpp"

namespace nvsed {

inline constexpr int kFrameMs = 10;
inline constexpr int kHistoryCap = 128;  // upper bound on tau

struct PostProcConfig {
  std::array<float, kNumSoundClasses> theta{};
  std::array<int, kNumSoundClasses> tau{};
  std::array<bool, kNumSoundClasses> active{};
  float theta_bg = 0.5f;
  int refractory = 50;
  // Optional: after an event of class c, class c must drop to <= theta_c
  // before it can fire again.
  bool rearm = false;
  // Optional: hold each event until `silence_frames` consecutive frames with
  // every sound probability below its threshold, then emit it.
  bool require_silence = false;
  int silence_frames = 30;

  // theta 0.5, tau 10, all classes active.
  static PostProcConfig defaults();
  PostProcConfig only_active(int cls) const;
  void validate() const;

  friend bool operator==(const PostProcConfig&, const PostProcConfig&) = default;
};

nlohmann::json to_json(const PostProcConfig& cfg, const ClassSet& classes = {});
PostProcConfig postproc_from_json(const nlohmann::json& j, const ClassSet& classes = {});

struct Event {
  int cls = 0;
  std::int64_t frame = 0;

  std::int64_t time_ms() const { return frame * kFrameMs; }
  friend bool operator==(const Event&, const Event&) = default;
};

nlohmann::json to_json(const Event& e, const ClassSet& classes = {});

// Streaming post-processor. Emits Event(c, t) when c is active, p_c > theta_c
// on each of the last tau_c rows, no background/speech probability exceeded
// theta_bg and no event was emitted in the last `refractory` rows (both
// windows include the current row). Ties go to the highest mean probability
// over the class's tau window, then the lowest class index.
class PostProcessor {
 public:
  explicit PostProcessor(PostProcConfig config);

  std::optional<Event> step(std::span<const float> row);

  // Takes effect from the next row; run lengths are recomputed from history.
  void set_config(const PostProcConfig& config);
  const PostProcConfig& config() const { return config_; }
  std::int64_t next_frame() const { return frame_; }

 private:
  void recompute_runs();

  PostProcConfig config_;
  std::int64_t frame_ = 0;
  std::array<std::array<float, kNumSoundClasses>, kHistoryCap> history_{};
  std::array<int, kNumSoundClasses> run_{};
  std::array<bool, kNumSoundClasses> armed_{};
  std::int64_t last_suppress_ = -1'000'000;
  std::int64_t last_event_ = -1'000'000;
  std::optional<Event> pending_;
  int quiet_run_ = 0;
};

std::vector<Event> process(const FrameProbs& probs, const PostProcConfig& config);

// Model outputs for one evaluation or aggressor clip.
struct ScoredClip {
  FrameProbs probs;
  std::vector<Segment> truth;
  double duration_s = 0.0;
};

struct OptimizeOptions {
  std::vector<float> thetas{0.40f, 0.45f, 0.50f, 0.55f, 0.60f};
  std::vector<int> taus{7, 8, 9, 10, 11, 12, 13, 14, 15};
  std::vector<float> theta_bgs{0.3f, 0.4f, 0.5f, 0.6f, 0.7f};
  double lambda_fp = 0.01;
  double lambda_latency = 0.1;
  int tolerance = kLabelInflation;
  // Classes to tune; empty means every class present in the eval truth.
  std::vector<int> classes;
};

struct OperatingPoint {
  int cls = -1;  // -1 for the global theta_bg sweep
  float theta = 0.0f;
  int tau = 0;
  float theta_bg = 0.0f;
  double f1 = 0.0;
  double fp_per_hour = 0.0;
  double latency_s = 0.0;
  double objective = 0.0;
};

struct OptimizeResult {
  PostProcConfig config;
  std::vector<OperatingPoint> points;
};

// Per-class grid search in one-active mode maximizing
// F1 - lambda_fp * FP/hour - lambda_latency * mean TP latency (s); ties keep
// the smaller tau, then the smaller theta. theta_bg is then swept globally
// with all classes active.
OptimizeResult optimize(const PostProcConfig& base, std::span<const ScoredClip> eval,
                        std::span<const ScoredClip> aggressors,
                        const OptimizeOptions& options = {});

}  // namespace nvsed
