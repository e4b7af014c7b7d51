#include "nvsed/annotate.hpp"

#include <algorithm>
#include <cmath>

#include "nvsed/classes.hpp"
#include "nvsed/error.hpp"

namespace nvsed {
namespace {

// Offset of the 10 ms block centered in a 25 ms window.
constexpr int kCenterOffset = (kWindowLength - kHopLength) / 2;

}  // namespace

std::vector<float> frame_energies(const AudioClip& clip) {
  const std::size_t frames = num_frames(clip.samples.size());
  std::vector<float> out(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* p = clip.samples.data() + t * kHopLength + kCenterOffset;
    double acc = 0.0;
    for (int i = 0; i < kHopLength; ++i) acc += static_cast<double>(p[i]) * p[i];
    out[t] = static_cast<float>(std::sqrt(acc / kHopLength));
  }
  return out;
}

std::vector<Segment> segment_energies(std::span<const float> energies, int label,
                                      const SegmentOptions& options) {
  std::vector<Segment> out;
  if (energies.empty()) return out;
  double mean = 0.0;
  for (float e : energies) mean += e;
  mean /= static_cast<double>(energies.size());
  double var = 0.0;
  for (float e : energies) var += (e - mean) * (e - mean);
  var /= static_cast<double>(energies.size());
  const double threshold = mean + options.sigma * std::sqrt(var);

  int run_start = -1;
  const int n = static_cast<int>(energies.size());
  for (int t = 0; t <= n; ++t) {
    const bool above = t < n && energies[t] > threshold;
    if (above && run_start < 0) run_start = t;
    if (!above && run_start >= 0) {
      if (t - run_start >= options.min_frames) out.push_back({run_start, t - 1, label});
      run_start = -1;
    }
  }
  return out;
}

std::vector<Segment> energy_segment(const AudioClip& clip, int label, const SegmentOptions& options) {
  if (num_frames(clip.samples.size()) == 0) {
    throw Error(ErrorCode::kTooShort, "clip has " + std::to_string(clip.samples.size()) +
                                          " samples, one frame needs 400");
  }
  return segment_energies(frame_energies(clip), label, options);
}

Matrix<float> render_frame_labels(std::span<const Segment> segments, std::size_t num_frames,
                                  int inflate) {
  Matrix<float> labels(num_frames, kNumClasses);
  if (num_frames == 0) return labels;
  const int last = static_cast<int>(num_frames) - 1;
  std::vector<std::uint8_t> taken(num_frames, 0);  // 1 margin, 2 raw

  for (const auto& s : segments) {
    const int lo = std::max(0, s.start_frame - inflate);
    const int hi = std::min(last, s.end_frame + inflate);
    for (int t = lo; t <= hi; ++t) {
      if (taken[t]) continue;
      labels(t, s.label) = 1.0f;
      taken[t] = 1;
    }
  }
  for (const auto& s : segments) {
    const int lo = std::max(0, s.start_frame);
    const int hi = std::min(last, s.end_frame);
    for (int t = lo; t <= hi; ++t) {
      if (taken[t] == 2) continue;
      auto row = labels.row(t);
      std::fill(row.begin(), row.end(), 0.0f);
      row[s.label] = 1.0f;
      taken[t] = 2;
    }
  }
  return labels;
}

LabeledClip make_sound_clip(AudioClip clip, int cls, std::vector<Segment> segments, int inflate) {
  LabeledClip out;
  out.feats = compute_features(clip);
  out.clip = std::move(clip);
  out.kind = ClipKind::kSound;
  out.clip_class = cls;
  out.segments = std::move(segments);
  out.frame_labels = render_frame_labels(out.segments, out.feats.rows(), inflate);
  return out;
}

LabeledClip annotate_sound_clip(AudioClip clip, int cls, int inflate) {
  auto segments = energy_segment(clip, cls);
  return make_sound_clip(std::move(clip), cls, std::move(segments), inflate);
}

LabeledClip annotate_background_clip(AudioClip clip) {
  LabeledClip out;
  out.feats = compute_features(clip);
  out.clip = std::move(clip);
  out.kind = ClipKind::kBackground;
  out.clip_class = kBackgroundClass;
  out.segments = {{0, static_cast<int>(out.feats.rows()) - 1, kBackgroundClass}};
  out.frame_labels = render_frame_labels(out.segments, out.feats.rows(), 0);
  return out;
}

LabeledClip annotate_speech_clip(AudioClip clip) {
  LabeledClip out;
  out.segments = energy_segment(clip, kSpeechClass);
  out.feats = compute_features(clip);
  out.clip = std::move(clip);
  out.kind = ClipKind::kSpeech;
  out.clip_class = kSpeechClass;
  out.frame_labels = render_frame_labels(out.segments, out.feats.rows(), 0);
  return out;
}

void relabel_with_energy(LabeledClip& clip, int inflate) {
  clip.segments = energy_segment(clip.clip, clip.clip_class);
  clip.frame_labels = render_frame_labels(clip.segments, clip.feats.rows(), inflate);
}

AuditEntry audit_clip(const FrameProbs& probs, std::span<const Segment> segments, int given_class) {
  AuditEntry entry;
  entry.given_class = given_class;
  std::array<double, kNumSoundClasses> sums{};
  std::size_t count = 0;
  for (const auto& s : segments) {
    const int hi = std::min(s.end_frame, static_cast<int>(probs.rows()) - 1);
    for (int t = std::max(0, s.start_frame); t <= hi; ++t) {
      for (int c = 0; c < kNumSoundClasses; ++c) sums[c] += probs(t, c);
      ++count;
    }
  }
  if (count == 0) return entry;
  int best = 0;
  for (int c = 1; c < kNumSoundClasses; ++c)
    if (sums[c] > sums[best]) best = c;
  entry.predicted_class = best;
  entry.confidence = static_cast<float>(sums[best] / static_cast<double>(count));
  return entry;
}

AuditReport audit_labels(const ModelWeights& weights, std::span<const LabeledClip> clips) {
  AuditReport report;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& clip = clips[i];
    if (clip.segments.empty() || !is_sound_class(clip.clip_class)) {
      report.skipped.push_back(i);
      continue;
    }
    const auto probs = forward(weights, clip.feats).probs;
    AuditEntry entry = audit_clip(probs, clip.segments, clip.clip_class);
    entry.clip_index = i;
    entry.source = clip.clip.source;
    ++report.audited;
    if (entry.predicted_class >= 0 && entry.predicted_class != entry.given_class) {
      report.flagged.push_back(std::move(entry));
    }
  }
  std::stable_sort(report.flagged.begin(), report.flagged.end(),
                   [](const AuditEntry& a, const AuditEntry& b) { return a.confidence > b.confidence; });
  return report;
}

}  // namespace nvsed
