#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/annotate.hpp"
#include "nvsed/audio.hpp"

namespace nvsed {

enum class SoundKind {
  kClick,  // train of resonant impulses
  kPop,    // low-passed noise burst
  kTone,   // fundamental plus two harmonics
  kHiss,   // high-passed noise
};

struct SynthClass {
  std::string name;  // must be one of the detector's class names
  SoundKind kind = SoundKind::kTone;
  double frequency_hz = 0.0;  // resonance / cutoff / fundamental
  double min_ms = 0.0;
  double max_ms = 0.0;
};

std::vector<SynthClass> default_synth_classes();

struct SynthSpec {
  std::uint64_t seed = 7;
  std::vector<SynthClass> classes = default_synth_classes();
  int repetitions = 10;
  double gap_seconds = 1.0;
  double gap_jitter_seconds = 0.25;
  double lead_seconds = 0.5;  // silence before the first / after the last sound
  double snr_min_db = 25.0;   // sound level over the noise floor, drawn per clip
  double snr_max_db = 40.0;
  int train_users = 20;
  int eval_users = 6;
  double aggressor_seconds = 600.0;
  double aggressor_clip_seconds = 10.0;
  double user_pitch_spread = 0.06;  // +/- relative per-user frequency jitter
  double shift_factor = 1.3;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& spec);
void from_json(const nlohmann::json& j, SynthSpec& spec);

// Voice characteristics of one synthetic user.
struct UserProfile {
  std::string id;
  double pitch = 1.0;      // multiplies every characteristic frequency
  double duration = 1.0;   // multiplies sound durations
  double gain_db = 0.0;
  double brightness = 1.0; // harmonic / resonance balance
};

UserProfile make_user(const SynthSpec& spec, std::uint64_t user_seed, bool shifted);

enum class AggressorKind { kPinkNoise, kBabble, kChirps };

struct Corpus {
  std::vector<LabeledClip> train;
  std::vector<LabeledClip> eval;
  std::vector<LabeledClip> aggressors;
};

// Sound clips carry construction-time truth segments (inflated targets
// rendered from them); aggressors are labeled via annotate.
Corpus generate_corpus(const SynthSpec& spec);

// One clip of `repetitions` sounds of spec.classes[class_slot] by `user`.
LabeledClip synth_sound_clip(const SynthSpec& spec, const UserProfile& user, int class_slot,
                             int repetitions, std::uint64_t seed);

LabeledClip synth_aggressor_clip(AggressorKind kind, double seconds, std::uint64_t seed);

// Cycles pink noise, babble and chirps until `seconds` are covered.
std::vector<LabeledClip> synth_aggressors(double total_seconds, double clip_seconds,
                                          std::uint64_t seed);

// Detector class index of every synthetic class, in spec order.
std::vector<int> synth_class_indices(const SynthSpec& spec);

// Power-weighted mean frequency over the given frames (for sanity checks).
double spectral_centroid(const AudioClip& clip, std::span<const Segment> segments);

}  // namespace nvsed
