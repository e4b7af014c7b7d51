#include <gtest/gtest.h>

#include <cmath>

#include "nvsed/error.hpp"
#include "nvsed/synthbench.hpp"
#include "nvsed/tcn.hpp"
#include "nvsed/train.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

namespace nvsed {
namespace {

using testing::random_features;
using testing::random_weights;
using testing::tiny_spec;

using testing::random_targets;

// Scalar reference: -[y log p + (1 - y) log(1 - p)] with p = sigmoid(z),
// evaluated in long double.
double scalar_bce(const Matrix<double>& z, const Matrix<float>& y) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < z.storage().size(); ++i) {
    const long double zz = z.storage()[i];
    const long double p = 1.0L / (1.0L + std::exp(-zz));
    const long double t = y.storage()[i];
    acc += -(t * std::log(p) + (1.0L - t) * std::log1p(-p));
  }
  return static_cast<double>(acc / z.storage().size());
}

TEST(Bce, HalfEverywhereIsLn2) {
  const Matrix<float> z(40, kNumClasses, 0.0f);
  EXPECT_NEAR(bce_with_logits(z, random_targets(40, 1)), std::log(2.0f), 1e-7);
  EXPECT_NEAR(bce_with_logits(Matrix<double>(40, kNumClasses, 0.0), random_targets(40, 2)), std::log(2.0), 1e-14);
}

TEST(Bce, ZeroTargetsDecreaseTowardZero) {
  const Matrix<float> y(10, kNumClasses, 0.0f);
  double prev = 1e9;
  for (double z = 0.0; z >= -60.0; z -= 2.0) {
    const double loss = bce_with_logits(Matrix<double>(10, kNumClasses, z), y);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-25);
  EXPECT_TRUE(std::isfinite(bce_with_logits(Matrix<double>(10, kNumClasses, 800.0), y)));
}

TEST(Bce, MatchesScalarOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    Matrix<double> z(15, kNumClasses);
    Rng rng(50 + trial);
    for (auto& v : z.storage()) v = 4.0 * rng.normal();
    const auto y = random_targets(15, 70 + trial);
    EXPECT_NEAR(bce_with_logits(z, y), scalar_bce(z, y), 1e-12);
  }
}

TEST(Bce, MaskRestrictsMean) {
  Matrix<double> z(4, kNumClasses, 0.0);
  for (int c = 0; c < kNumClasses; ++c) z(2, c) = 3.0;
  const Matrix<float> y(4, kNumClasses, 0.0f);
  const std::vector<std::uint8_t> mask{0, 0, 1, 0};
  EXPECT_NEAR(bce_with_logits(z, y, mask), std::log1p(std::exp(3.0)), 1e-12);
}

class FiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(FiniteDifference, GradientsMatchCentralDifferences) {
  const int variant = GetParam();
  ModelSpec spec = tiny_spec(8, 2 + 2 * (variant == 2), 2);
  if (variant == 1) spec.residual = ResidualSpan::kBottleneck;
  const ModelWeights w = random_weights(spec, 200 + variant, 0.4f);
  FeatureNorm norm{std::vector<float>(64, 0.1f), std::vector<float>(64, 0.8f)};
  const auto r = testing::check_gradients(spec, w, variant == 2 ? &norm : nullptr, random_features(30, 300 + variant),
                                          random_targets(30, 400 + variant));
  EXPECT_LT(r.worst, 1e-4) << r.where;
  std::size_t total = 0;
  for (const auto& t : w.tensors) total += t.data.size();
  EXPECT_EQ(r.checked, total);
}

INSTANTIATE_TEST_SUITE_P(TinyModels, FiniteDifference, ::testing::Values(0, 1, 2));

TEST(Backward, LossMatchesInferenceForward) {
  const ModelWeights w = random_weights(tiny_spec(), 9);
  const FeatureMatrix f = random_features(25, 10);
  const auto y = random_targets(25, 11);
  const auto res = backward<double>(w.spec, tensor_list<double>(w), nullptr, f, y);
  const auto probs = forward(w, f).probs;
  for (std::size_t i = 0; i < probs.storage().size(); ++i) {
    EXPECT_NEAR(1.0 / (1.0 + std::exp(-res.logits.storage()[i])), probs.storage()[i], 1e-5);
  }
}

TEST(Backward, ZeroModelHeadBiasGradient) {
  const ModelWeights w = zero_weights(tiny_spec());
  const auto res = backward<double>(w.spec, tensor_list<double>(w), nullptr, random_features(20, 1),
                                    Matrix<float>(20, kNumClasses, 0.0f));
  EXPECT_NEAR(res.loss, std::log(2.0), 1e-14);
  const auto& bias = res.grads.back();
  ASSERT_EQ(bias.size(), static_cast<std::size_t>(kNumClasses));
  // d/db_c of the mean over T x C entries of sigmoid(0) - 0.
  for (double g : bias) EXPECT_NEAR(g, 0.5 / kNumClasses, 1e-15);
}

TEST(Backward, NothingFlowsFromOutsideTheReceptiveCone) {
  const ModelSpec spec = tiny_spec(8, 2, 2);
  const ModelWeights w = random_weights(spec, 12);
  const FeatureMatrix f = random_features(40, 13);
  const auto y = random_targets(40, 14);
  std::vector<std::uint8_t> mask(40, 0);
  mask[0] = 1;
  BackwardOptions opts;
  opts.frame_mask = mask;
  opts.input_gradient = true;
  const auto res = backward<double>(spec, tensor_list<double>(w), nullptr, f, y, opts);
  // Frame 0 only sees the newest stem tap; the older taps read padding.
  const auto& stem = res.grads[0];
  const std::size_t per_tap = 64 * 8;
  for (std::size_t j = 0; j < 4 * per_tap; ++j) ASSERT_EQ(stem[j], 0.0);
  bool any = false;
  for (std::size_t j = 4 * per_tap; j < 5 * per_tap; ++j) any = any || stem[j] != 0.0;
  EXPECT_TRUE(any);

  std::fill(mask.begin(), mask.end(), 0);
  mask[20] = 1;
  const auto res2 = backward<double>(spec, tensor_list<double>(w), nullptr, f, y, opts);
  const int rf = spec.receptive_field();
  for (std::size_t t = 0; t < 40; ++t) {
    bool nonzero = false;
    for (double v : res2.input_grad.row(t)) nonzero = nonzero || v != 0.0;
    if (t > 20 || static_cast<int>(t) <= 20 - rf) {
      EXPECT_FALSE(nonzero) << t;
    }
  }
}

TEST(Backward, NonFiniteInputIsAttributed) {
  const ModelWeights w = random_weights(tiny_spec(), 1);
  FeatureMatrix f = random_features(10, 2);
  f(3, 5) = std::numeric_limits<float>::infinity();
  try {
    backward<float>(w.spec, tensor_list<float>(w), nullptr, f, random_targets(10, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_FALSE(std::string(e.what()).empty());
  }
}

TEST(BatchComposer, AggressorShareStaysNearMix) {
  std::vector<std::size_t> sounds, aggs;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) sounds.push_back(300 + rng.below(900));
  for (int i = 0; i < 20; ++i) aggs.push_back(998);
  for (double mix : {0.5, 0.0, 0.25, 1.0}) {
    BatchComposer c(sounds, aggs, 1000, mix, 77);
    std::size_t agg = 0, total = 0;
    for (int b = 0; b < 100; ++b) {
      std::size_t frames = 0;
      for (const auto& p : c.next()) {
        frames += p.length;
        if (p.aggressor) agg += p.length;
        EXPECT_LE(p.start + p.length, p.aggressor ? aggs[p.clip] : sounds[p.clip]);
      }
      ASSERT_EQ(frames, 1000u);
      total += frames;
    }
    EXPECT_NEAR(static_cast<double>(agg) / total, mix, 0.05) << mix;
  }
}

SynthSpec small_synth() {
  SynthSpec s;
  s.train_users = 3;
  s.eval_users = 1;
  s.repetitions = 6;
  s.aggressor_seconds = 60.0;
  return s;
}

TEST(Train, SameSeedGivesIdenticalWeights) {
  const Corpus corpus = generate_corpus(small_synth());
  TrainConfig cfg;
  cfg.model = tiny_spec(16, 4, 2);
  cfg.epochs = 2;
  cfg.steps_per_epoch = 4;
  cfg.batch_frames = 300;
  cfg.validation_batches = 2;
  cfg.seed = 3;
  const auto a = train(corpus.train, corpus.aggressors, cfg);
  const auto b = train(corpus.train, corpus.aggressors, cfg);
  EXPECT_EQ(serialize_weights(a.weights), serialize_weights(b.weights));
  EXPECT_EQ(a.step_losses, b.step_losses);
  cfg.seed = 4;
  EXPECT_NE(serialize_weights(train(corpus.train, corpus.aggressors, cfg).weights), serialize_weights(a.weights));
}

TEST(Train, LossFallsDuringFirstEpochWithDefaults) {
  const Corpus corpus = generate_corpus(small_synth());
  TrainConfig cfg;
  cfg.epochs = 1;
  std::vector<EpochStats> seen;
  const auto r = train(corpus.train, corpus.aggressors, cfg, [&](const EpochStats& s) { seen.push_back(s); });
  ASSERT_EQ(r.step_losses.size(), static_cast<std::size_t>(cfg.steps_per_epoch));
  ASSERT_EQ(seen.size(), 1u);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 5; ++i) {
    head += r.step_losses[i];
    tail += r.step_losses[r.step_losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
  EXPECT_TRUE(std::isfinite(seen[0].validation_loss));
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig cfg;
  cfg.aggressor_mix = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
  TrainConfig d;
  d.epochs = 7;
  d.seed = 99;
  nlohmann::json j = d;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(back.epochs, 7);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.model, d.model);
}

}  // namespace
}  // namespace nvsed
