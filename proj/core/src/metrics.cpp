#include "nvsed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nvsed/error.hpp"

namespace nvsed {

std::optional<double> ClassCounts::precision() const {
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / (tp + fp);
}

std::optional<double> ClassCounts::recall() const {
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / (tp + fn);
}

std::optional<double> ClassCounts::f1() const {
  if (2 * tp + fp + fn == 0) return std::nullopt;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

ClipMatch match_clip(std::span<const Event> events, std::span<const Segment> truth, int tolerance) {
  std::vector<Segment> segs(truth.begin(), truth.end());
  std::sort(segs.begin(), segs.end(),
            [](const Segment& a, const Segment& b) { return a.start_frame < b.start_frame; });
  for (std::size_t i = 1; i < segs.size(); ++i) {
    if (segs[i].start_frame <= segs[i - 1].end_frame) {
      throw Error(ErrorCode::kInvalidArgument,
                  "truth segments overlap at frame " + std::to_string(segs[i].start_frame));
    }
  }
  auto within = [tolerance](const Event& e, const Segment& s) {
    return e.frame >= static_cast<std::int64_t>(s.start_frame) - tolerance &&
           e.frame <= static_cast<std::int64_t>(s.end_frame) + tolerance;
  };

  ClipMatch out;
  std::vector<bool> matched(segs.size(), false);
  for (const auto& e : events) {
    bool hit = false;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (!matched[i] && segs[i].label == e.cls && within(e, segs[i])) {
        matched[i] = true;
        out.true_positives.push_back({e, segs[i]});
        hit = true;
        break;
      }
    }
    if (!hit) out.false_positives.push_back(e);
  }
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (matched[i]) continue;
    out.missed.push_back(segs[i]);
    int column = kMissedColumn;
    for (const auto& e : events) {
      if (e.cls != segs[i].label && within(e, segs[i])) {
        column = e.cls;
        break;
      }
    }
    out.missed_confusion.push_back(column);
  }
  return out;
}

std::optional<LatencyStats> summarize_latencies(std::span<const double> latencies_ms) {
  if (latencies_ms.empty()) return std::nullopt;
  double mean = 0.0;
  for (double l : latencies_ms) mean += l;
  mean /= static_cast<double>(latencies_ms.size());
  double var = 0.0;
  for (double l : latencies_ms) var += (l - mean) * (l - mean);
  var /= static_cast<double>(latencies_ms.size());
  return LatencyStats{mean, std::sqrt(var), static_cast<int>(latencies_ms.size())};
}

EvalReport segmental_score(std::span<const ClipOutcome> clips, int tolerance) {
  EvalReport report;
  report.tolerance = tolerance;
  std::vector<double> latencies;
  for (const auto& clip : clips) {
    const ClipMatch m = match_clip(clip.events, clip.truth, tolerance);
    for (const auto& tp : m.true_positives) {
      const int c = tp.segment.label;
      if (!is_sound_class(c)) continue;
      ++report.per_class[c].tp;
      ++report.confusion[c][c];
      latencies.push_back(static_cast<double>(tp.event.frame - tp.segment.end_frame) * kFrameMs);
    }
    for (const auto& e : m.false_positives) {
      if (is_sound_class(e.cls)) ++report.per_class[e.cls].fp;
    }
    for (std::size_t i = 0; i < m.missed.size(); ++i) {
      const int c = m.missed[i].label;
      if (!is_sound_class(c)) continue;
      ++report.per_class[c].fn;
      ++report.confusion[c][m.missed_confusion[i]];
    }
    report.audio_seconds += clip.duration_s;
  }
  for (const auto& c : report.per_class) report.total += c;
  report.latency = summarize_latencies(latencies);
  if (report.audio_seconds > 0.0) {
    FpRate rate;
    for (int c = 0; c < kNumSoundClasses; ++c) {
      rate.per_class[c] = 3600.0 * report.per_class[c].fp / report.audio_seconds;
    }
    rate.overall = 3600.0 * report.total.fp / report.audio_seconds;
    report.fp_per_hour = rate;
  }
  return report;
}

std::optional<double> EvalReport::macro_f1(std::span<const int> classes) const {
  double sum = 0.0;
  int n = 0;
  for (int c : classes) {
    if (auto f = per_class.at(static_cast<std::size_t>(c)).f1()) {
      sum += *f;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::vector<int> EvalReport::classes_with_truth() const {
  std::vector<int> out;
  for (int c = 0; c < kNumSoundClasses; ++c)
    if (per_class[c].tp + per_class[c].fn > 0) out.push_back(c);
  return out;
}

namespace {

nlohmann::json optional_number(std::optional<double> v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json counts_json(const ClassCounts& c) {
  return {{"tp", c.tp},
          {"fp", c.fp},
          {"fn", c.fn},
          {"precision", optional_number(c.precision())},
          {"recall", optional_number(c.recall())},
          {"f1", optional_number(c.f1())}};
}

std::string fmt_ratio(std::optional<double> v) {
  if (!v) return "-";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

}  // namespace

nlohmann::json EvalReport::to_json(const ClassSet& classes) const {
  nlohmann::json j;
  j["tolerance_frames"] = tolerance;
  j["audio_seconds"] = audio_seconds;
  auto& per = j["classes"] = nlohmann::json::object();
  for (int c = 0; c < kNumSoundClasses; ++c) per[classes.name(c)] = counts_json(per_class[c]);
  j["total"] = counts_json(total);
  const auto truth_classes = classes_with_truth();
  j["macro_f1"] = optional_number(macro_f1(truth_classes));

  nlohmann::json columns = nlohmann::json::array();
  nlohmann::json rows = nlohmann::json::array();
  for (int c = 0; c < kNumSoundClasses; ++c) {
    columns.push_back(classes.name(c));
    rows.push_back(classes.name(c));
  }
  columns.push_back("missed");
  j["confusion"] = {{"rows", rows}, {"columns", columns}, {"counts", confusion}};

  if (latency) {
    j["latency_ms"] = {{"mean", latency->mean_ms}, {"std", latency->std_ms}, {"count", latency->count}};
  } else {
    j["latency_ms"] = nullptr;
  }
  if (fp_per_hour) {
    nlohmann::json pc = nlohmann::json::object();
    for (int c = 0; c < kNumSoundClasses; ++c) pc[classes.name(c)] = fp_per_hour->per_class[c];
    j["fp_per_hour"] = {{"overall", fp_per_hour->overall}, {"per_class", pc}};
  } else {
    j["fp_per_hour"] = nullptr;
  }
  return j;
}

std::string EvalReport::to_table(const ClassSet& classes) const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %6s %6s %6s %9s %9s %9s\n", "class", "TP", "FP", "FN",
                "precision", "recall", "F1");
  os << line;
  auto row = [&](const std::string& name, const ClassCounts& c) {
    std::snprintf(line, sizeof line, "%-12s %6d %6d %6d %9s %9s %9s\n", name.c_str(), c.tp, c.fp, c.fn,
                  fmt_ratio(c.precision()).c_str(), fmt_ratio(c.recall()).c_str(), fmt_ratio(c.f1()).c_str());
    os << line;
  };
  for (int c = 0; c < kNumSoundClasses; ++c) {
    const auto& pc = per_class[c];
    if (pc.tp + pc.fp + pc.fn > 0) row(classes.name(c), pc);
  }
  row("total", total);
  os << "macro F1: " << fmt_ratio(macro_f1(classes_with_truth())) << "\n";
  if (latency) {
    std::snprintf(line, sizeof line, "latency: %.1f +/- %.1f ms over %d detections\n", latency->mean_ms,
                  latency->std_ms, latency->count);
    os << line;
  } else {
    os << "latency: n/a\n";
  }
  if (fp_per_hour) {
    std::snprintf(line, sizeof line, "false positives per hour: %.2f\n", fp_per_hour->overall);
    os << line;
  }
  return os.str();
}

FpRate fp_per_hour(std::span<const Event> events, double duration_s) {
  if (!(duration_s > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "FP/hour needs a positive audio duration");
  }
  FpRate rate;
  for (const auto& e : events) {
    if (is_sound_class(e.cls)) rate.per_class[e.cls] += 3600.0 / duration_s;
  }
  rate.overall = 3600.0 * static_cast<double>(events.size()) / duration_s;
  return rate;
}

std::optional<LatencyStats> latency_stats(std::span<const Event> events, std::span<const Segment> truth,
                                          int tolerance) {
  const ClipMatch m = match_clip(events, truth, tolerance);
  std::vector<double> latencies;
  for (const auto& tp : m.true_positives) {
    latencies.push_back(static_cast<double>(tp.event.frame - tp.segment.end_frame) * kFrameMs);
  }
  return summarize_latencies(latencies);
}

}  // namespace nvsed
