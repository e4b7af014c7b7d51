#include "nvsed/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "nvsed/error.hpp"

namespace nvsed {
namespace {

constexpr int kNumFftBins = kFftSize / 2 + 1;
constexpr int kFftLog2 = 9;

}  // namespace

std::size_t num_frames(std::size_t num_samples) {
  if (num_samples < static_cast<std::size_t>(kWindowLength)) return 0;
  return (num_samples - kWindowLength) / kHopLength + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::array<double, kNumMelBins> mel_center_frequencies() {
  std::array<double, kNumMelBins> out{};
  const double lo = hz_to_mel(kMelLowHz);
  const double hi = hz_to_mel(kMelHighHz);
  const double step = (hi - lo) / (kNumMelBins + 1);
  for (int m = 0; m < kNumMelBins; ++m) out[m] = mel_to_hz(lo + step * (m + 1));
  return out;
}

LogMelExtractor::LogMelExtractor() {
  for (int n = 0; n < kWindowLength; ++n) {
    window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindowLength);
  }

  const double lo = hz_to_mel(kMelLowHz);
  const double hi = hz_to_mel(kMelHighHz);
  const double step = (hi - lo) / (kNumMelBins + 1);
  filters_.assign(kNumMelBins, std::vector<double>(kNumFftBins, 0.0));
  for (int m = 0; m < kNumMelBins; ++m) {
    const double left = mel_to_hz(lo + step * m);
    const double center = mel_to_hz(lo + step * (m + 1));
    const double right = mel_to_hz(lo + step * (m + 2));
    for (int k = 0; k < kNumFftBins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / kFftSize;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      filters_[m][k] = w;
    }
  }

  cos_table_.resize(kFftSize / 2);
  sin_table_.resize(kFftSize / 2);
  for (int k = 0; k < kFftSize / 2; ++k) {
    cos_table_[k] = std::cos(2.0 * std::numbers::pi * k / kFftSize);
    sin_table_[k] = -std::sin(2.0 * std::numbers::pi * k / kFftSize);
  }
  bit_reverse_.resize(kFftSize);
  for (int i = 0; i < kFftSize; ++i) {
    int r = 0;
    for (int b = 0; b < kFftLog2; ++b) r |= ((i >> b) & 1) << (kFftLog2 - 1 - b);
    bit_reverse_[i] = r;
  }
}

void LogMelExtractor::compute_frame(std::span<const float> window, std::span<float> out) const {
  std::array<double, kFftSize> re{};
  std::array<double, kFftSize> im{};
  for (int n = 0; n < kWindowLength; ++n) {
    re[bit_reverse_[n]] = static_cast<double>(window[n]) * window_[n];
  }
  // Iterative radix-2 decimation in time.
  for (int len = 2; len <= kFftSize; len <<= 1) {
    const int half = len / 2;
    const int stride = kFftSize / len;
    for (int start = 0; start < kFftSize; start += len) {
      for (int k = 0; k < half; ++k) {
        const double wr = cos_table_[k * stride];
        const double wi = sin_table_[k * stride];
        const int a = start + k;
        const int b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
  std::array<double, kNumFftBins> power{};
  for (int k = 0; k < kNumFftBins; ++k) power[k] = re[k] * re[k] + im[k] * im[k];
  for (int m = 0; m < kNumMelBins; ++m) {
    double e = 0.0;
    const auto& f = filters_[m];
    for (int k = 0; k < kNumFftBins; ++k) e += f[k] * power[k];
    out[m] = static_cast<float>(std::log(std::max(e, static_cast<double>(kEnergyFloor))));
  }
}

const LogMelExtractor& default_extractor() {
  static const LogMelExtractor extractor;
  return extractor;
}

FeatureMatrix compute_features(const AudioClip& clip) {
  validate_clip(clip);
  const std::size_t frames = num_frames(clip.samples.size());
  if (frames == 0) {
    throw Error(ErrorCode::kTooShort, "clip has " + std::to_string(clip.samples.size()) +
                                          " samples, one window needs 400");
  }
  const auto& extractor = default_extractor();
  FeatureMatrix feats(frames, kNumMelBins);
  for (std::size_t t = 0; t < frames; ++t) {
    extractor.compute_frame(
        std::span<const float>(clip.samples.data() + t * kHopLength, kWindowLength), feats.row(t));
  }
  return feats;
}

FeatureMatrix StreamingFrontend::push(std::span<const float> samples) {
  pending_.insert(pending_.end(), samples.begin(), samples.end());
  const std::size_t frames = num_frames(pending_.size());
  FeatureMatrix out(frames, kNumMelBins);
  const auto& extractor = default_extractor();
  for (std::size_t t = 0; t < frames; ++t) {
    extractor.compute_frame(
        std::span<const float>(pending_.data() + t * kHopLength, kWindowLength), out.row(t));
  }
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(frames * kHopLength));
  frames_emitted_ += frames;
  return out;
}

void StreamingFrontend::reset() {
  pending_.clear();
  frames_emitted_ = 0;
}

void write_feature_dump(const std::filesystem::path& path, const FeatureMatrix& feats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(feats.rows()),
                                   static_cast<std::uint32_t>(feats.cols()), 0u};
  out.write("NVSF", 4);
  for (std::uint32_t v : header) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  for (float f : feats.storage()) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
}

FeatureMatrix read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "NVSF", 4) != 0) {
    throw Error(ErrorCode::kFormat, "not a feature dump: " + path.string());
  }
  auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(bytes[off]) | (static_cast<std::uint32_t>(bytes[off + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes[off + 2]) << 16) | (static_cast<std::uint32_t>(bytes[off + 3]) << 24);
  };
  const std::size_t rows = u32(4);
  const std::size_t cols = u32(8);
  if (bytes.size() != 16 + rows * cols * 4) {
    throw Error(ErrorCode::kTruncated, "feature dump size does not match its header");
  }
  FeatureMatrix feats(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::uint32_t bits = u32(16 + 4 * i);
    std::memcpy(feats.data() + i, &bits, 4);
  }
  return feats;
}

}  // namespace nvsed
