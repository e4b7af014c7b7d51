#include <gtest/gtest.h>

#include <cmath>

#include "nvsed/annotate.hpp"
#include "nvsed/error.hpp"
#include "nvsed/tcn.hpp"
#include "test_util.hpp"

namespace nvsed {
namespace {

// Linear-scan oracle written against the framing directly: energy of frame t
// is the RMS of samples [160t + 120, 160t + 280).
std::vector<Segment> oracle_segments(const AudioClip& c, int label) {
  const std::size_t T = (c.samples.size() - 400) / 160 + 1;
  std::vector<double> e(T);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t i = 160 * t + 120; i < 160 * t + 280; ++i) s += double(c.samples[i]) * c.samples[i];
    e[t] = std::sqrt(s / 160.0);
  }
  double mean = 0.0, sq = 0.0;
  for (double v : e) mean += v;
  mean /= T;
  for (double v : e) sq += (v - mean) * (v - mean);
  const double thr = mean + std::sqrt(sq / T);
  std::vector<Segment> out;
  std::size_t t = 0;
  while (t < T) {
    if (e[t] <= thr) {
      ++t;
      continue;
    }
    std::size_t u = t;
    while (u + 1 < T && e[u + 1] > thr) ++u;
    if (u - t + 1 >= 3) out.push_back({int(t), int(u), label});
    t = u + 1;
  }
  return out;
}

AudioClip burst_clip(std::size_t total, std::size_t start, std::size_t len, std::uint64_t seed) {
  AudioClip c = testing::noise_clip(total, seed, 0.01);
  Rng rng(seed + 1);
  for (std::size_t i = start; i < start + len; ++i) c.samples[i] = static_cast<float>(0.1 * rng.normal());
  return c;
}

std::vector<int> positives(const Matrix<float>& labels, int cls) {
  std::vector<int> out;
  for (std::size_t t = 0; t < labels.rows(); ++t)
    if (labels(t, cls) == 1.0f) out.push_back(static_cast<int>(t));
  return out;
}

std::vector<int> range(int a, int b) {
  std::vector<int> v;
  for (int i = a; i <= b; ++i) v.push_back(i);
  return v;
}

TEST(EnergySegment, ConstantAmplitudeGivesNothing) {
  AudioClip c;
  c.samples.assign(16000, 0.25f);
  EXPECT_TRUE(energy_segment(c, 3).empty());
  c.samples.assign(16000, 0.0f);
  EXPECT_TRUE(energy_segment(c, 3).empty());
}

TEST(EnergySegment, FiftyMsBurstGivesOneSegmentMatchingOracle) {
  const AudioClip c = burst_clip(16000, 8000, 800, 4);
  const auto segs = energy_segment(c, 2);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs, oracle_segments(c, 2));
  // Frames whose center block lies fully inside the burst.
  EXPECT_LE(segs[0].start_frame, 49);
  EXPECT_GE(segs[0].end_frame, 53);
  EXPECT_EQ(segs[0].label, 2);
}

TEST(EnergySegment, TwentyMsBurstIsTooShort) {
  const AudioClip c = burst_clip(16000, 160 * 49 + 120, 320, 6);
  EXPECT_TRUE(energy_segment(c, 1).empty());
}

TEST(EnergySegment, MatchesOracleOnRandomBurstClips) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    AudioClip c = testing::noise_clip(24000, 100 + trial, 0.005);
    const int bursts = 1 + static_cast<int>(rng.below(4));
    for (int b = 0; b < bursts; ++b) {
      const std::size_t len = 160 + rng.below(2400);
      const std::size_t start = rng.below(24000 - len);
      const double amp = rng.uniform(0.05, 0.3);
      for (std::size_t i = start; i < start + len; ++i) c.samples[i] = static_cast<float>(amp * rng.normal());
    }
    const auto segs = energy_segment(c, 4);
    ASSERT_EQ(segs, oracle_segments(c, 4)) << trial;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      EXPECT_GE(segs[i].length(), 3);
      if (i > 0) EXPECT_GT(segs[i].start_frame, segs[i - 1].end_frame);
    }
  }
}

TEST(EnergySegment, TooShortClip) {
  try {
    energy_segment(testing::noise_clip(300, 1), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooShort);
  }
}

TEST(FrameLabels, InflationExamples) {
  const std::vector<Segment> a{{100, 120, 4}};
  EXPECT_EQ(positives(render_frame_labels(a, 1000, 13), 4), range(87, 133));
  EXPECT_EQ(positives(render_frame_labels(a, 1000, 0), 4), range(100, 120));
  const std::vector<Segment> b{{5, 10, 4}};
  EXPECT_EQ(positives(render_frame_labels(b, 1000, 13), 4), range(0, 23));
  const std::vector<Segment> c{{990, 995, 4}};
  EXPECT_EQ(positives(render_frame_labels(c, 1000, 13), 4), range(977, 999));
}

TEST(FrameLabels, SameClassOverlapsMergeAndRawFramesWinOverMargins) {
  const std::vector<Segment> same{{100, 110, 2}, {120, 130, 2}};
  EXPECT_EQ(positives(render_frame_labels(same, 300, 13), 2), range(87, 143));
  const std::vector<Segment> mixed{{100, 110, 2}, {115, 125, 7}};
  const auto labels = render_frame_labels(mixed, 300, 13);
  EXPECT_EQ(positives(labels, 7), range(115, 138));
  EXPECT_EQ(positives(labels, 2), range(87, 114));
}

TEST(FrameLabels, RowsAreAtMostOneHotAndCoverRawFrames) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Segment> segs;
    int t = static_cast<int>(rng.below(20));
    while (true) {
      const int len = 3 + static_cast<int>(rng.below(30));
      if (t + len >= 500) break;
      segs.push_back({t, t + len - 1, static_cast<int>(rng.below(15))});
      t += len + static_cast<int>(rng.below(40));
    }
    const int inflate = static_cast<int>(rng.below(20));
    const auto labels = render_frame_labels(segs, 500, inflate);
    double total = 0.0;
    for (std::size_t r = 0; r < 500; ++r) {
      double sum = 0.0;
      for (float v : labels.row(r)) {
        ASSERT_TRUE(v == 0.0f || v == 1.0f);
        sum += v;
      }
      ASSERT_LE(sum, 1.0);
      total += sum;
    }
    double raw = 0.0;
    for (const auto& s : segs) {
      raw += s.length();
      for (int r = s.start_frame; r <= s.end_frame; ++r) ASSERT_EQ(labels(r, s.label), 1.0f);
    }
    EXPECT_GE(total, raw);
  }
}

TEST(Audit, AgreementIsNotFlagged) {
  FrameProbs probs(100, kNumClasses, 0.1f);
  const std::vector<Segment> segs{{10, 20, 6}, {50, 60, 6}};
  for (const auto& s : segs)
    for (int t = s.start_frame; t <= s.end_frame; ++t) probs(t, 6) = 0.9f;
  const auto e = audit_clip(probs, segs, 6);
  EXPECT_EQ(e.predicted_class, 6);
  EXPECT_FLOAT_EQ(e.confidence, 0.9f);
  const auto swapped = audit_clip(probs, segs, 3);
  EXPECT_EQ(swapped.predicted_class, 6);
  EXPECT_EQ(swapped.given_class, 3);
}

TEST(Audit, MeanIsTakenOverAllSegmentFrames) {
  FrameProbs probs(40, kNumClasses, 0.0f);
  // Class 1 wins one long segment, class 2 wins a short one with a higher peak.
  for (int t = 0; t < 10; ++t) probs(t, 1) = 0.6f;
  for (int t = 20; t < 23; ++t) probs(t, 2) = 0.95f;
  const std::vector<Segment> segs{{0, 9, 1}, {20, 22, 1}};
  EXPECT_EQ(audit_clip(probs, segs, 1).predicted_class, 1);
  // Background never wins even if it dominates.
  for (int t = 0; t < 40; ++t) probs(t, kBackgroundClass) = 1.0f;
  EXPECT_EQ(audit_clip(probs, segs, 1).predicted_class, 1);
}

TEST(Audit, SkipsClipsWithoutSegmentsAndIsDeterministic) {
  const ModelWeights w = testing::random_weights(testing::tiny_spec(), 5);
  std::vector<LabeledClip> clips;
  clips.push_back(annotate_sound_clip(burst_clip(16000, 4000, 1600, 1), 3));
  clips.push_back(make_sound_clip(testing::noise_clip(8000, 2), 5, {}));
  clips.push_back(annotate_background_clip(testing::noise_clip(8000, 3)));
  clips.push_back(annotate_sound_clip(burst_clip(16000, 9000, 1600, 4), 7));
  clips[0].clip.source = "a.wav";
  const auto r1 = audit_labels(w, clips);
  const auto r2 = audit_labels(w, clips);
  EXPECT_EQ(r1.audited, 2u);
  EXPECT_EQ(r1.skipped, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(r1.flagged.size(), r2.flagged.size());
  for (std::size_t i = 0; i < r1.flagged.size(); ++i) {
    EXPECT_EQ(r1.flagged[i].clip_index, r2.flagged[i].clip_index);
    EXPECT_EQ(r1.flagged[i].confidence, r2.flagged[i].confidence);
    if (i > 0) EXPECT_GE(r1.flagged[i - 1].confidence, r1.flagged[i].confidence);
    EXPECT_NE(r1.flagged[i].predicted_class, r1.flagged[i].given_class);
  }
}

TEST(Annotate, AggressorLabels) {
  const auto bg = annotate_background_clip(testing::noise_clip(4000, 2));
  for (std::size_t t = 0; t < bg.frame_labels.rows(); ++t) EXPECT_EQ(bg.frame_labels(t, kBackgroundClass), 1.0f);
  const auto sp = annotate_speech_clip(burst_clip(16000, 5000, 3200, 7));
  ASSERT_FALSE(sp.segments.empty());
  for (const auto& s : sp.segments) {
    EXPECT_EQ(s.label, kSpeechClass);
    EXPECT_EQ(sp.frame_labels(s.start_frame, kSpeechClass), 1.0f);
  }
  EXPECT_EQ(sp.frame_labels(0, kSpeechClass), 0.0f);
}

}  // namespace
}  // namespace nvsed
