// One PASS/FAIL line per headline criterion on stdout; progress on stderr.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "nvsed/annotate.hpp"
#include "nvsed/events.hpp"
#include "nvsed/frontend.hpp"
#include "nvsed/harness.hpp"
#include "nvsed/metrics.hpp"
#include "nvsed/synthbench.hpp"
#include "nvsed/tcn.hpp"
#include "nvsed/train.hpp"
#include "postproc_oracle.hpp"
#include "test_util.hpp"

namespace nvsed {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(const char* name, bool pass, const std::string& detail) {
  std::printf("%s  %-26s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& s) {
  std::fprintf(stderr, "[%s]\n", s.c_str());
  std::fflush(stderr);
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0, refined = 0, total = 0;
  FeatureNorm norm{std::vector<float>(kNumMelBins, 0.1f), std::vector<float>(kNumMelBins, 0.8f)};
  for (int variant = 0; variant < 3; ++variant) {
    ModelSpec spec = testing::tiny_spec(8, 2 + 2 * (variant == 2), 2);
    if (variant == 1) spec.residual = ResidualSpan::kBottleneck;
    const ModelWeights w = testing::random_weights(spec, 200 + variant, 0.4f);
    const auto r = testing::check_gradients(spec, w, variant == 2 ? &norm : nullptr,
                                            testing::random_features(30, 300 + variant),
                                            testing::random_targets(30, 400 + variant));
    worst = std::max(worst, r.worst);
    checked += r.checked;
    refined += r.refined;
    for (const auto& t : w.tensors) total += t.data.size();
  }
  const double secs = seconds_since(t0);
  verdict("gradient-correctness", worst < 1e-4 && checked == total && secs < 60.0,
          fmt("max rel err %.2e over %zu entries (%zu re-stepped across a kink), %.1f s", worst, checked, refined,
              secs));
}

void receptive_field() {
  const auto t0 = Clock::now();
  const ModelWeights w = init_weights(ModelSpec{}, 5);
  const int rf = w.spec.receptive_field();
  const FeatureMatrix base = testing::random_features(200, 6);
  const FrameProbs ref = forward(w, base).probs;
  bool exact = true, tight = true;
  int rows = 0;
  for (int t : {24, 25, 60, 120, 199}) {
    FeatureMatrix f = base;
    Rng rng(static_cast<std::uint64_t>(t));
    for (int s = 0; s < t - (rf - 1); ++s)
      for (auto& v : f.row(static_cast<std::size_t>(s))) v += static_cast<float>(rng.normal());
    const FrameProbs p = forward(w, f).probs;
    exact = exact && std::memcmp(p.row(t).data(), ref.row(t).data(), sizeof(float) * kNumClasses) == 0;
    FeatureMatrix g = base;
    for (auto& v : g.row(static_cast<std::size_t>(t - (rf - 1)))) v += 1.0f;
    const FrameProbs q = forward(w, g).probs;
    tight = tight && std::memcmp(q.row(t).data(), ref.row(t).data(), sizeof(float) * kNumClasses) != 0;
    ++rows;
  }
  const double secs = seconds_since(t0);
  verdict("receptive-field", rf == 25 && exact && tight && secs < 1.0,
          fmt("rf %d frames; rows %s under earlier perturbation (%d rows), frame t-24 %s; %.2f s", rf,
              exact ? "bit-identical" : "CHANGED", rows, tight ? "matters" : "IGNORED", secs));
}

void streaming_equivalence() {
  const auto t0 = Clock::now();
  const SynthSpec spec;
  const LabeledClip clip = synth_sound_clip(spec, make_user(spec, 77, false), 2, 5, 78);
  auto weights = std::make_shared<const ModelWeights>(testing::random_weights(ModelSpec{}, 79, 0.05f));
  PostProcConfig cfg = PostProcConfig::defaults();
  cfg.theta.fill(0.5f);
  cfg.tau.fill(2);
  cfg.theta_bg = 0.99f;
  cfg.refractory = 10;

  const FeatureMatrix feats = compute_features(clip.clip);
  const ForwardOutput batch = forward(*weights, feats);
  const std::vector<Event> events = process(batch.probs, cfg);

  Rng rng(80);
  int matched = 0;
  const std::size_t n = clip.clip.samples.size();
  for (int trial = 0; trial < 100; ++trial) {
    StreamingFrontend fe;
    StreamSession tcn(weights);
    PostProcessor post(cfg);
    FeatureMatrix got_feats;
    FrameProbs got_probs;
    std::vector<Event> got_events;
    std::size_t i = 0;
    while (i < n) {
      const std::size_t len = std::min<std::size_t>(n - i, rng.below(trial % 2 ? 5000 : 400));
      const FeatureMatrix f = fe.push(std::span<const float>(clip.clip.samples).subspan(i, len));
      const ForwardOutput o = tcn.push(f);
      for (std::size_t r = 0; r < o.probs.rows(); ++r) {
        if (auto e = post.step(o.probs.row(r))) got_events.push_back(*e);
      }
      got_feats.append_rows(f);
      got_probs.append_rows(o.probs);
      i += len;
    }
    matched += got_feats == feats && got_probs == batch.probs && got_events == events;
  }
  const double secs = seconds_since(t0);
  verdict("streaming-equivalence", matched == 100 && !events.empty() && secs < 60.0,
          fmt("%d/100 chunkings bit-identical (%zu frames, %zu events), %.1f s", matched, feats.rows(),
              events.size(), secs));
}

void postproc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  int matched = 0;
  std::size_t events = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const FrameProbs p = testing::random_probs(2000, rng);
    const PostProcConfig cfg = testing::random_config(rng);
    const auto got = process(p, cfg);
    events += got.size();
    matched += got == testing::brute_force(p, cfg);
  }
  const double secs = seconds_since(t0);
  verdict("postproc-oracle", matched == 1000 && secs < 60.0,
          fmt("%d/1000 matrices identical to the reference simulator (%zu events), %.1f s", matched, events, secs));
}

struct Trained {
  ModelWeights weights;
  double seconds = 0.0;
};

Trained train_model(const Corpus& corpus, double mix) {
  TrainConfig cfg;
  cfg.aggressor_mix = mix;
  const auto t0 = Clock::now();
  TrainResult r = train(corpus.train, corpus.aggressors, cfg, [&](const EpochStats& s) {
    progress(fmt("mix %.2f epoch %d train %.4f val %.4f  %.0f s", mix, s.epoch, s.train_loss, s.validation_loss,
                 seconds_since(t0)));
  });
  return {std::move(r.weights), seconds_since(t0)};
}

struct Scores {
  double one_active = 0.0;
  double all_active = 0.0;
  std::optional<LatencyStats> latency;
  double fp_per_hour = 0.0;
};

Scores score(const ModelWeights& w, std::span<const LabeledClip> eval, std::span<const LabeledClip> noise,
             std::span<const int> classes) {
  const auto clips = score_clips(w, eval);
  const auto noise_clips = score_clips(w, noise);
  const PostProcConfig cfg = PostProcConfig::defaults();
  const EvalReport one = evaluate(clips, cfg, true, classes);
  const EvalReport all = evaluate(clips, cfg, false, classes);
  return {one.macro_f1(classes).value_or(0.0), all.macro_f1(classes).value_or(0.0), all.latency,
          false_positives_per_hour(noise_clips, cfg)};
}

// Per-chunk cost of the whole streaming path on 160-sample chunks.
std::pair<double, double> per_frame_ms(const ModelWeights& w, const AudioClip& clip) {
  auto weights = std::make_shared<const ModelWeights>(w);
  StreamingFrontend fe;
  StreamSession tcn(weights);
  PostProcessor post(PostProcConfig::defaults());
  std::vector<double> ms;
  const auto hop = static_cast<std::size_t>(kHopLength);
  for (std::size_t i = 0; i + hop <= clip.samples.size(); i += hop) {
    const auto t0 = Clock::now();
    const ForwardOutput o = tcn.push(fe.push(std::span<const float>(clip.samples).subspan(i, hop)));
    for (std::size_t r = 0; r < o.probs.rows(); ++r) post.step(o.probs.row(r));
    ms.push_back(1e3 * seconds_since(t0));
  }
  double sum = 0.0;
  for (double v : ms) sum += v;
  std::sort(ms.begin(), ms.end());
  return {sum / static_cast<double>(ms.size()), ms[ms.size() * 99 / 100]};
}

void trained_criteria() {
  const SynthSpec spec;
  const auto classes = synth_class_indices(spec);
  progress("generating the default synthetic corpus");
  const Corpus corpus = generate_corpus(spec);
  double sound_audio = 0.0, aggressor_audio = 0.0;
  for (const auto& c : corpus.train) sound_audio += c.clip.duration_seconds();
  for (const auto& c : corpus.aggressors) aggressor_audio += c.clip.duration_seconds();
  const auto noise = synth_aggressors(600.0, 10.0, 12345);

  const Trained mixed = train_model(corpus, 0.5);
  const Scores s50 = score(mixed.weights, corpus.eval, noise, classes);
  verdict("end-to-end-synthetic",
          s50.one_active >= 0.95 && s50.all_active >= 0.90 && mixed.seconds <= 900.0,
          fmt("one-active F1 %.3f, all-active F1 %.3f on %zu held-out clips; %.1f min sounds + %.1f min aggressors, trained in %.0f s",
              s50.one_active, s50.all_active, corpus.eval.size(), sound_audio / 60.0, aggressor_audio / 60.0,
              mixed.seconds));

  const Trained plain = train_model(corpus, 0.0);
  const Scores s0 = score(plain.weights, corpus.eval, noise, classes);
  const double reduction = s0.fp_per_hour > 0.0 ? 1.0 - s50.fp_per_hour / s0.fp_per_hour : 0.0;
  const double drop_one = s0.one_active - s50.one_active;
  const double drop_all = s0.all_active - s50.all_active;
  verdict("aggressor-ablation", reduction >= 0.90 && drop_one <= 0.03 && drop_all <= 0.03,
          fmt("FP/h %.1f -> %.1f (%.1f%% fewer); F1 drop %.1f points one-active, %.1f all-active", s0.fp_per_hour,
              s50.fp_per_hour, 100.0 * reduction, 100.0 * drop_one, 100.0 * drop_all));

  progress("personalization cohort");
  auto t0 = Clock::now();
  const CohortResult cohort = run_personalization_cohort(mixed.weights, spec, PostProcConfig::defaults());
  const double cohort_secs = seconds_since(t0);
  const std::size_t five = cohort.shots.size() - 1;
  bool monotone = true;
  for (std::size_t i = 1; i < cohort.mean_improvement.size(); ++i) {
    monotone = monotone && cohort.mean_improvement[i] > cohort.mean_improvement[i - 1];
  }
  std::string gains;
  for (std::size_t i = 0; i < cohort.shots.size(); ++i) {
    gains += fmt("%s%d-shot %+.3f", i ? ", " : "", cohort.shots[i], cohort.mean_improvement[i]);
  }
  verdict("personalization-cohort",
          cohort.users == 20 && cohort.rescued_fraction(five) >= 0.80 && monotone && cohort_secs <= 300.0,
          fmt("%d users, %zu failing pairs; 5-shot rescues %d (%.1f%%); mean gain %s; %.0f s", cohort.users,
              cohort.pairs.size(), cohort.rescued[five], 100.0 * cohort.rescued_fraction(five), gains.c_str(),
              cohort_secs));

  const auto [mean_ms, p99_ms] = per_frame_ms(mixed.weights, corpus.eval.front().clip);
  const double lat = s50.latency ? s50.latency->mean_ms : 1e9;
  verdict("latency", s50.latency && lat >= -100.0 && lat <= 200.0 && mean_ms < 10.0,
          fmt("detection latency %.1f +/- %.1f ms over %d events; per-frame compute %.3f ms mean, %.3f ms p99",
              lat, s50.latency ? s50.latency->std_ms : 0.0, s50.latency ? s50.latency->count : 0, mean_ms, p99_ms));

  progress("label audit");
  SynthSpec fresh = spec;
  fresh.seed = 4711;
  fresh.train_users = 0;
  fresh.eval_users = 20;
  fresh.aggressor_seconds = 0.0;
  const std::vector<LabeledClip> audit_clips = generate_corpus(fresh).eval;
  const SwapExperiment swap = run_swap_audit(mixed.weights, audit_clips, classes, 0.10, 99);
  verdict("label-audit", !swap.swapped.empty() && swap.recall() >= 0.90,
          fmt("%zu/%zu swapped clips recovered (%.1f%%) among %zu audited; %zu flagged, precision %.1f%%",
              swap.recovered, swap.swapped.size(), 100.0 * swap.recall(), audit_clips.size(), swap.flagged.size(),
              100.0 * swap.precision()));
}

}  // namespace
}  // namespace nvsed

int main() {
  using namespace nvsed;
  try {
    gradient_correctness();
    receptive_field();
    streaming_equivalence();
    postproc_oracle();
    trained_criteria();
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
