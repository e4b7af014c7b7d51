#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "nvsed/audio.hpp"
#include "nvsed/matrix.hpp"

namespace nvsed {

inline constexpr int kNumMelBins = 64;
inline constexpr int kWindowLength = 400;  // 25 ms
inline constexpr int kHopLength = 160;     // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr double kMelLowHz = 20.0;
inline constexpr double kMelHighHz = 8000.0;
inline constexpr float kEnergyFloor = 1e-10f;

// T x 64 log-mel energies at 100 frames per second.
using FeatureMatrix = Matrix<float>;

// floor((n - 400) / 160) + 1 for n >= 400, else 0.
std::size_t num_frames(std::size_t num_samples);

double hz_to_mel(double hz);  // HTK
double mel_to_hz(double mel);
// Center frequency (Hz) of each of the 64 triangular filters.
std::array<double, kNumMelBins> mel_center_frequencies();

// Hann-windowed 512-point power spectrum mapped through a unit-peak HTK mel
// filterbank, then log(max(x, 1e-10)). One instance is immutable and can be
// shared between threads.
class LogMelExtractor {
 public:
  LogMelExtractor();

  // `window` holds exactly kWindowLength samples.
  void compute_frame(std::span<const float> window, std::span<float> out) const;

  // Weight of FFT bin k (0..256) in mel filter m.
  double filter_weight(int m, int k) const { return filters_[m][k]; }

 private:
  std::array<double, kWindowLength> window_{};
  std::vector<std::vector<double>> filters_;  // [64][257]
  std::vector<double> cos_table_;
  std::vector<double> sin_table_;
  std::vector<int> bit_reverse_;
};

const LogMelExtractor& default_extractor();

// Throws kTooShort below one window and kRateMismatch for non-16 kHz input.
FeatureMatrix compute_features(const AudioClip& clip);

// Incremental front-end: push arbitrary sample chunks, receive every frame
// that became complete. Keeps fewer than 400 pending samples between calls.
class StreamingFrontend {
 public:
  FeatureMatrix push(std::span<const float> samples);
  std::size_t pending_samples() const { return pending_.size(); }
  std::size_t frames_emitted() const { return frames_emitted_; }
  void reset();

 private:
  std::vector<float> pending_;
  std::size_t frames_emitted_ = 0;
};

// Debug dump: "NVSF", u32 T, u32 bins, u32 reserved, then f32 LE row-major.
void write_feature_dump(const std::filesystem::path& path, const FeatureMatrix& feats);
FeatureMatrix read_feature_dump(const std::filesystem::path& path);

}  // namespace nvsed
