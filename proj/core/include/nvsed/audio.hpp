#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nvsed {

inline constexpr int kSampleRate = 16000;

// Mono audio with samples in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string source;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws kRateMismatch for non-16 kHz clips and kInvalidArgument for
// non-finite or out-of-range samples.
void validate_clip(const AudioClip& clip);

float pcm16_to_float(std::int16_t v);
std::int16_t float_to_pcm16(float v);
std::vector<float> pcm16_to_float(std::span<const std::int16_t> pcm);
std::vector<std::int16_t> float_to_pcm16(std::span<const float> samples);

// RIFF/WAVE, PCM16, mono, 16 kHz. Anything else is rejected.
AudioClip read_wav(const std::filesystem::path& path);
AudioClip parse_wav(std::span<const std::uint8_t> bytes, std::string source = {});
void write_wav(const std::filesystem::path& path, const AudioClip& clip);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);

}  // namespace nvsed
