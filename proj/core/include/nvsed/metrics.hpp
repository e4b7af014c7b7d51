#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/annotate.hpp"
#include "nvsed/classes.hpp"
#include "nvsed/events.hpp"

namespace nvsed {

inline constexpr int kMissedColumn = kNumSoundClasses;

struct ClassCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;

  // Absent when the denominator is zero.
  std::optional<double> precision() const;
  std::optional<double> recall() const;
  std::optional<double> f1() const;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct LatencyStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;  // population
  int count = 0;
};

struct FpRate {
  double overall = 0.0;
  std::array<double, kNumSoundClasses> per_class{};
};

// Events and ground truth of one clip.
struct ClipOutcome {
  std::vector<Event> events;
  std::vector<Segment> truth;
  double duration_s = 0.0;
};

struct EvalReport {
  std::array<ClassCounts, kNumSoundClasses> per_class{};
  ClassCounts total;
  // Rows: truth class. Columns: detected class, or kMissedColumn.
  std::array<std::array<int, kNumSoundClasses + 1>, kNumSoundClasses> confusion{};
  std::optional<LatencyStats> latency;
  std::optional<FpRate> fp_per_hour;
  double audio_seconds = 0.0;
  int tolerance = 0;

  // Mean per-class F1 over `classes` (those with a defined F1).
  std::optional<double> macro_f1(std::span<const int> classes) const;
  // Classes that have at least one truth segment.
  std::vector<int> classes_with_truth() const;

  nlohmann::json to_json(const ClassSet& classes = {}) const;
  std::string to_table(const ClassSet& classes = {}) const;
};

struct Match {
  Event event;
  Segment segment;
};

// Segment-level matching within one clip. A truth segment is a true positive
// if an event of its class lands in [start - tolerance, end + tolerance];
// extra or unmatched events are false positives. Throws kInvalidArgument on
// overlapping truth segments.
struct ClipMatch {
  std::vector<Match> true_positives;
  std::vector<Event> false_positives;
  std::vector<Segment> missed;
  std::vector<int> missed_confusion;  // detected wrong class or kMissedColumn
};

ClipMatch match_clip(std::span<const Event> events, std::span<const Segment> truth,
                     int tolerance = kLabelInflation);

EvalReport segmental_score(std::span<const ClipOutcome> clips, int tolerance = kLabelInflation);

// 3600 * count / duration. Throws kInvalidArgument for non-positive duration.
FpRate fp_per_hour(std::span<const Event> events, double duration_s);

// Signed latency (event frame - segment end frame) * 10 ms over true
// positives; absent when there are none.
std::optional<LatencyStats> latency_stats(std::span<const Event> events,
                                          std::span<const Segment> truth,
                                          int tolerance = kLabelInflation);
std::optional<LatencyStats> summarize_latencies(std::span<const double> latencies_ms);

// Per-user success criterion: F1 >= 0.5.
inline bool detection_success(std::optional<double> f1) { return f1 && *f1 >= 0.5; }

}  // namespace nvsed
