#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <vector>

#include "nvsed/audio.hpp"
#include "nvsed/error.hpp"
#include "nvsed/frontend.hpp"
#include "test_util.hpp"

namespace nvsed {
namespace {

// Independent reference: direct O(N^2) DFT of the Hann-windowed frame and a
// filterbank built from the stated conventions.
class ReferenceLogMel {
 public:
  ReferenceLogMel() {
    auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    std::vector<double> edges(66);
    for (int i = 0; i < 66; ++i) edges[i] = hz(mel(20.0) + (mel(8000.0) - mel(20.0)) * i / 65.0);
    for (int m = 0; m < 64; ++m) {
      centers_.push_back(edges[m + 1]);
      std::vector<double> row(257, 0.0);
      for (int k = 0; k <= 256; ++k) {
        const double f = k * 16000.0 / 512.0;
        if (f > edges[m] && f <= edges[m + 1]) row[k] = (f - edges[m]) / (edges[m + 1] - edges[m]);
        if (f > edges[m + 1] && f < edges[m + 2]) row[k] = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      }
      filters_.push_back(row);
    }
  }

  std::vector<double> frame(const float* x) const {
    std::vector<double> power(257);
    for (int k = 0; k <= 256; ++k) {
      std::complex<double> acc = 0.0;
      for (int n = 0; n < 400; ++n) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / 400.0);
        acc += x[n] * w * std::polar(1.0, -2.0 * std::numbers::pi * k * n / 512.0);
      }
      power[k] = std::norm(acc);
    }
    std::vector<double> out(64);
    for (int m = 0; m < 64; ++m) {
      double e = 0.0;
      for (int k = 0; k <= 256; ++k) e += filters_[m][k] * power[k];
      out[m] = std::log(std::max(e, 1e-10));
    }
    return out;
  }

  double center(int m) const { return centers_[m]; }

 private:
  std::vector<double> centers_;
  std::vector<std::vector<double>> filters_;
};

AudioClip sine(double hz, std::size_t n, double amp = 0.5) {
  AudioClip c;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / 16000.0));
  return c;
}

TEST(Frontend, FramingFormulaHoldsForAllLengths) {
  for (std::size_t n = 400; n <= 48000; ++n) {
    ASSERT_EQ(num_frames(n), (n - 400) / 160 + 1) << n;
  }
  EXPECT_EQ(num_frames(399), 0u);
  for (std::size_t n : {400u, 559u, 560u, 1000u, 16000u, 47999u}) {
    EXPECT_EQ(compute_features(testing::noise_clip(n, n)).rows(), (n - 400) / 160 + 1);
  }
}

TEST(Frontend, SilenceGivesFloorEverywhere) {
  AudioClip c;
  c.samples.assign(16000, 0.0f);
  const auto f = compute_features(c);
  ASSERT_EQ(f.rows(), 98u);
  ASSERT_EQ(f.cols(), 64u);
  for (float v : f.storage()) EXPECT_EQ(v, std::log(1e-10f));
}

TEST(Frontend, OneWindowGivesOneFrame) {
  EXPECT_EQ(compute_features(testing::noise_clip(400, 3)).rows(), 1u);
}

TEST(Frontend, MatchesDirectDftOracle) {
  const ReferenceLogMel ref;
  const AudioClip clip = testing::noise_clip(2000, 11, 0.2);
  const auto f = compute_features(clip);
  for (std::size_t t = 0; t < f.rows(); ++t) {
    const auto expect = ref.frame(clip.samples.data() + t * 160);
    for (int m = 0; m < 64; ++m) {
      EXPECT_NEAR(f(t, m), expect[m], 1e-4 * std::max(1.0, std::abs(expect[m]))) << t << "," << m;
    }
  }
}

TEST(Frontend, SineAtBinCenterPeaksInThatBin) {
  const ReferenceLogMel ref;
  const auto centers = mel_center_frequencies();
  for (int b : {12, 20, 28, 36, 44, 52, 60}) {
    EXPECT_NEAR(centers[b], ref.center(b), 1e-9);
    const AudioClip c = sine(ref.center(b), 16000);
    const auto f = compute_features(c);
    const auto oracle = ref.frame(c.samples.data() + 160 * 40);
    EXPECT_EQ(std::max_element(oracle.begin(), oracle.end()) - oracle.begin(), b);
    for (std::size_t t = 0; t < f.rows(); ++t) {
      const auto row = f.row(t);
      ASSERT_EQ(std::max_element(row.begin(), row.end()) - row.begin(), b) << "bin " << b << " frame " << t;
    }
  }
}

TEST(Frontend, ShiftByOneHopShiftsRows) {
  const AudioClip c = testing::noise_clip(8000, 5);
  AudioClip shifted;
  shifted.samples.assign(160, 0.0f);
  shifted.samples.insert(shifted.samples.end(), c.samples.begin(), c.samples.end());
  const auto a = compute_features(c);
  const auto b = compute_features(shifted);
  ASSERT_EQ(b.rows(), a.rows() + 1);
  for (std::size_t t = 0; t < a.rows(); ++t) {
    for (int m = 0; m < 64; ++m) ASSERT_EQ(a(t, m), b(t + 1, m));
  }
}

TEST(Frontend, DoublingAmplitudeNeverLowersAnyValue) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    AudioClip c = testing::noise_clip(4000, seed, 0.05);
    AudioClip louder = c;
    for (auto& s : louder.samples) s *= 2.0f;
    const auto a = compute_features(c);
    const auto b = compute_features(louder);
    for (std::size_t i = 0; i < a.storage().size(); ++i) ASSERT_GE(b.storage()[i], a.storage()[i]);
  }
}

TEST(Frontend, StreamingMatchesBatchForAnyChunking) {
  const AudioClip c = testing::noise_clip(10000, 9);
  const auto batch = compute_features(c);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    StreamingFrontend fe;
    FeatureMatrix got;
    std::size_t i = 0;
    while (i < c.samples.size()) {
      const std::size_t n = std::min<std::size_t>(c.samples.size() - i, 1 + rng.below(700));
      got.append_rows(fe.push(std::span<const float>(c.samples.data() + i, n)));
      EXPECT_LT(fe.pending_samples(), 400u);
      i += n;
    }
    ASSERT_EQ(got, batch);
  }
}

TEST(Frontend, Errors) {
  try {
    compute_features(testing::noise_clip(399, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooShort);
  }
  AudioClip c = testing::noise_clip(1000, 1);
  c.sample_rate = 44100;
  try {
    compute_features(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRateMismatch);
  }
  AudioClip bad = testing::noise_clip(1000, 1);
  bad.samples[10] = std::nanf("");
  EXPECT_THROW(compute_features(bad), Error);
  bad.samples[10] = 1.5f;
  EXPECT_THROW(compute_features(bad), Error);
}

TEST(Wav, RoundTripAndRejection) {
  AudioClip c = testing::noise_clip(1234, 2);
  const auto bytes = encode_wav(c);
  const AudioClip back = parse_wav(bytes);
  ASSERT_EQ(back.samples.size(), c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) EXPECT_NEAR(back.samples[i], c.samples[i], 1.0 / 32768.0);
  EXPECT_EQ(encode_wav(back), bytes);

  auto wrong_rate = bytes;
  wrong_rate[24] = 0x44;  // sample rate low byte
  wrong_rate[25] = 0xAC;
  try {
    parse_wav(wrong_rate);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRateMismatch);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_wav(bad_magic), Error);
  auto truncated = bytes;
  truncated.resize(30);
  EXPECT_THROW(parse_wav(truncated), Error);
}

TEST(FeatureDump, RoundTrip) {
  const auto f = compute_features(testing::noise_clip(3000, 8));
  const auto path = std::filesystem::temp_directory_path() / "nvsed_dump_test.nvsf";
  write_feature_dump(path, f);
  EXPECT_EQ(std::filesystem::file_size(path), 16 + 4 * f.storage().size());
  EXPECT_EQ(read_feature_dump(path), f);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace nvsed
