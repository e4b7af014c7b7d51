#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nvsed/audio.hpp"
#include "nvsed/frontend.hpp"
#include "nvsed/matrix.hpp"
#include "nvsed/model.hpp"
#include "nvsed/tcn.hpp"

namespace nvsed {

inline constexpr int kMinSegmentFrames = 3;  // 30 ms
inline constexpr int kLabelInflation = 13;   // half the receptive field

// Inclusive frame range carrying one class label.
struct Segment {
  int start_frame = 0;
  int end_frame = 0;
  int label = 0;

  int length() const { return end_frame - start_frame + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

enum class ClipKind { kSound, kBackground, kSpeech };

struct LabeledClip {
  AudioClip clip;
  FeatureMatrix feats;
  ClipKind kind = ClipKind::kSound;
  int clip_class = -1;             // given label; 15/16 for aggressor clips
  std::vector<Segment> segments;   // uninflated
  Matrix<float> frame_labels;      // T x 17 training targets
  std::string user;
};

// RMS of the 10 ms hop block at the center of each 25 ms analysis window,
// one value per front-end frame.
std::vector<float> frame_energies(const AudioClip& clip);

struct SegmentOptions {
  int min_frames = kMinSegmentFrames;
  double sigma = 1.0;  // threshold = mean + sigma * stddev over the clip
};

// Runs of frames whose energy exceeds the clip-level mean + 1 sigma; runs
// shorter than min_frames are dropped. Throws kTooShort below one frame.
std::vector<Segment> energy_segment(const AudioClip& clip, int label,
                                    const SegmentOptions& options = {});
std::vector<Segment> segment_energies(std::span<const float> energies, int label,
                                      const SegmentOptions& options = {});

// T x 17 one-hot targets. Each segment is widened by `inflate` frames on both
// sides (clipped to [0, T)); raw segment frames take precedence over widened
// margins, and earlier segments over later ones.
Matrix<float> render_frame_labels(std::span<const Segment> segments, std::size_t num_frames,
                                  int inflate);

// Builders that compute features and targets for one clip.
LabeledClip make_sound_clip(AudioClip clip, int cls, std::vector<Segment> segments,
                            int inflate = kLabelInflation);
LabeledClip annotate_sound_clip(AudioClip clip, int cls, int inflate = kLabelInflation);
// Every frame labeled background.
LabeledClip annotate_background_clip(AudioClip clip);
// Energy-active frames labeled speech, the rest unlabeled.
LabeledClip annotate_speech_clip(AudioClip clip);

// Re-derives segments and targets of a sound clip with energy_segment.
void relabel_with_energy(LabeledClip& clip, int inflate = kLabelInflation);

struct AuditEntry {
  std::size_t clip_index = 0;
  std::string source;
  int given_class = -1;
  int predicted_class = -1;
  float confidence = 0.0f;  // mean in-segment probability of predicted_class
};

struct AuditReport {
  std::vector<AuditEntry> flagged;   // predicted != given, by descending confidence
  std::vector<std::size_t> skipped;  // clips without segments or without a sound label
  std::size_t audited = 0;
};

// Argmax over the sound classes of the mean in-segment probability.
AuditEntry audit_clip(const FrameProbs& probs, std::span<const Segment> segments, int given_class);

AuditReport audit_labels(const ModelWeights& weights, std::span<const LabeledClip> clips);

}  // namespace nvsed
