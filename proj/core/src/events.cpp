#include "nvsed/events.hpp"

#include <algorithm>

#include "nvsed/error.hpp"
#include "nvsed/metrics.hpp"

namespace nvsed {

PostProcConfig PostProcConfig::defaults() {
  PostProcConfig cfg;
  cfg.theta.fill(0.5f);
  cfg.tau.fill(10);
  cfg.active.fill(true);
  return cfg;
}

PostProcConfig PostProcConfig::only_active(int cls) const {
  PostProcConfig cfg = *this;
  cfg.active.fill(false);
  cfg.active.at(static_cast<std::size_t>(cls)) = true;
  return cfg;
}

void PostProcConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidArgument, "post-processor config: " + what);
  };
  for (int c = 0; c < kNumSoundClasses; ++c) {
    if (!(theta[c] > 0.0f && theta[c] < 1.0f)) fail("theta of class " + std::to_string(c) + " must be in (0, 1)");
    if (tau[c] < 1 || tau[c] > kHistoryCap) {
      fail("tau of class " + std::to_string(c) + " must be in [1, " + std::to_string(kHistoryCap) + "]");
    }
  }
  if (!(theta_bg > 0.0f && theta_bg < 1.0f)) fail("theta_bg must be in (0, 1)");
  if (refractory < 0) fail("refractory window must be >= 0");
  if (require_silence && silence_frames < 1) fail("silence_frames must be >= 1");
}

nlohmann::json to_json(const PostProcConfig& cfg, const ClassSet& classes) {
  nlohmann::json j;
  j["theta_bg"] = cfg.theta_bg;
  j["refractory"] = cfg.refractory;
  j["rearm"] = cfg.rearm;
  j["require_silence"] = cfg.require_silence;
  j["silence_frames"] = cfg.silence_frames;
  auto& per = j["classes"] = nlohmann::json::object();
  for (int c = 0; c < kNumSoundClasses; ++c) {
    per[classes.name(c)] = {{"theta", cfg.theta[c]}, {"tau", cfg.tau[c]}, {"active", cfg.active[c]}};
  }
  return j;
}

PostProcConfig postproc_from_json(const nlohmann::json& j, const ClassSet& classes) {
  PostProcConfig cfg = PostProcConfig::defaults();
  try {
    cfg.theta_bg = j.value("theta_bg", cfg.theta_bg);
    cfg.refractory = j.value("refractory", cfg.refractory);
    cfg.rearm = j.value("rearm", cfg.rearm);
    cfg.require_silence = j.value("require_silence", cfg.require_silence);
    cfg.silence_frames = j.value("silence_frames", cfg.silence_frames);
    if (j.contains("classes")) {
      for (const auto& [name, v] : j["classes"].items()) {
        const int c = classes.index_of(name);
        if (!is_sound_class(c)) {
          throw Error(ErrorCode::kInvalidArgument, "'" + name + "' is not a sound class");
        }
        cfg.theta[c] = v.value("theta", cfg.theta[c]);
        cfg.tau[c] = v.value("tau", cfg.tau[c]);
        cfg.active[c] = v.value("active", cfg.active[c]);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("post-processor config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const Event& e, const ClassSet& classes) {
  return {{"class", classes.name(e.cls)}, {"frame", e.frame}, {"time_ms", e.time_ms()}};
}

PostProcessor::PostProcessor(PostProcConfig config) : config_(config) {
  config_.validate();
  armed_.fill(true);
}

void PostProcessor::set_config(const PostProcConfig& config) {
  config.validate();
  config_ = config;
  recompute_runs();
}

void PostProcessor::recompute_runs() {
  const std::int64_t available = std::min<std::int64_t>(frame_, kHistoryCap);
  for (int c = 0; c < kNumSoundClasses; ++c) {
    int run = 0;
    for (std::int64_t back = 1; back <= available; ++back) {
      if (history_[(frame_ - back) % kHistoryCap][c] > config_.theta[c]) {
        ++run;
      } else {
        break;
      }
    }
    run_[c] = run;
  }
}

std::optional<Event> PostProcessor::step(std::span<const float> row) {
  if (row.size() != static_cast<std::size_t>(kNumClasses)) {
    throw Error(ErrorCode::kInvalidArgument,
                "probability row has " + std::to_string(row.size()) + " entries, expected 17");
  }
  const std::int64_t t = frame_++;
  auto& slot = history_[t % kHistoryCap];
  for (int c = 0; c < kNumSoundClasses; ++c) {
    slot[c] = row[c];
    if (row[c] > config_.theta[c]) {
      run_[c] = std::min(run_[c] + 1, kHistoryCap);
    } else {
      run_[c] = 0;
      armed_[c] = true;
    }
  }
  if (row[kBackgroundClass] > config_.theta_bg || row[kSpeechClass] > config_.theta_bg) {
    last_suppress_ = t;
  }

  if (pending_) {
    bool quiet = true;
    for (int c = 0; c < kNumSoundClasses; ++c) quiet = quiet && row[c] < config_.theta[c];
    quiet_run_ = quiet ? quiet_run_ + 1 : 0;
    if (quiet_run_ < config_.silence_frames) return std::nullopt;
    Event e{pending_->cls, t};
    pending_.reset();
    last_event_ = t;
    return e;
  }

  const std::int64_t window_start = t - config_.refractory + 1;
  if (last_suppress_ >= window_start || last_event_ >= window_start) return std::nullopt;

  int best = -1;
  double best_mean = 0.0;
  for (int c = 0; c < kNumSoundClasses; ++c) {
    if (!config_.active[c] || run_[c] < config_.tau[c]) continue;
    if (config_.rearm && !armed_[c]) continue;
    double sum = 0.0;
    for (std::int64_t s = t - config_.tau[c] + 1; s <= t; ++s) sum += history_[s % kHistoryCap][c];
    const double mean = sum / config_.tau[c];
    if (best < 0 || mean > best_mean) {
      best = c;
      best_mean = mean;
    }
  }
  if (best < 0) return std::nullopt;
  if (config_.rearm) armed_[best] = false;
  if (config_.require_silence) {
    pending_ = Event{best, t};
    quiet_run_ = 0;
    return std::nullopt;
  }
  last_event_ = t;
  return Event{best, t};
}

std::vector<Event> process(const FrameProbs& probs, const PostProcConfig& config) {
  PostProcessor pp(config);
  std::vector<Event> events;
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    if (auto e = pp.step(probs.row(t))) events.push_back(*e);
  }
  return events;
}

namespace {

struct Evaluation {
  double f1 = 0.0;
  double fp_per_hour = 0.0;
  double latency_s = 0.0;
};

Evaluation evaluate(const PostProcConfig& cfg, std::span<const ScoredClip> eval,
                    std::span<const ScoredClip> aggressors, std::span<const int> classes, int tolerance) {
  std::vector<ClipOutcome> outcomes;
  outcomes.reserve(eval.size());
  for (const auto& clip : eval) outcomes.push_back({process(clip.probs, cfg), clip.truth, clip.duration_s});
  const EvalReport report = segmental_score(outcomes, tolerance);

  Evaluation out;
  out.f1 = report.macro_f1(classes).value_or(0.0);
  if (report.latency) out.latency_s = report.latency->mean_ms / 1000.0;

  double seconds = 0.0;
  std::size_t count = 0;
  for (const auto& clip : aggressors) {
    count += process(clip.probs, cfg).size();
    seconds += clip.duration_s;
  }
  if (seconds > 0.0) out.fp_per_hour = 3600.0 * static_cast<double>(count) / seconds;
  return out;
}

}  // namespace

OptimizeResult optimize(const PostProcConfig& base, std::span<const ScoredClip> eval,
                        std::span<const ScoredClip> aggressors, const OptimizeOptions& options) {
  if (eval.empty()) throw Error(ErrorCode::kInvalidArgument, "optimize needs evaluation clips");
  base.validate();

  std::vector<int> classes = options.classes;
  if (classes.empty()) {
    std::array<bool, kNumSoundClasses> seen{};
    for (const auto& clip : eval)
      for (const auto& s : clip.truth)
        if (is_sound_class(s.label)) seen[s.label] = true;
    for (int c = 0; c < kNumSoundClasses; ++c)
      if (seen[c]) classes.push_back(c);
  }
  if (classes.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluation clips carry no sound segments");

  OptimizeResult result;
  result.config = base;
  for (int c : classes) {
    const std::array<int, 1> only{c};
    bool have = false;
    double best = 0.0;
    for (int tau : options.taus) {
      for (float theta : options.thetas) {
        PostProcConfig cfg = base.only_active(c);
        cfg.theta[c] = theta;
        cfg.tau[c] = tau;
        const Evaluation e = evaluate(cfg, eval, aggressors, only, options.tolerance);
        const double objective =
            e.f1 - options.lambda_fp * e.fp_per_hour - options.lambda_latency * e.latency_s;
        result.points.push_back({c, theta, tau, cfg.theta_bg, e.f1, e.fp_per_hour, e.latency_s, objective});
        if (!have || objective > best) {
          have = true;
          best = objective;
          result.config.theta[c] = theta;
          result.config.tau[c] = tau;
        }
      }
    }
  }

  bool have = false;
  double best = 0.0;
  float best_bg = base.theta_bg;
  for (float bg : options.theta_bgs) {
    PostProcConfig cfg = result.config;
    cfg.theta_bg = bg;
    const Evaluation e = evaluate(cfg, eval, aggressors, classes, options.tolerance);
    const double objective = e.f1 - options.lambda_fp * e.fp_per_hour - options.lambda_latency * e.latency_s;
    result.points.push_back({-1, 0.0f, 0, bg, e.f1, e.fp_per_hour, e.latency_s, objective});
    if (!have || objective > best) {
      have = true;
      best = objective;
      best_bg = bg;
    }
  }
  result.config.theta_bg = best_bg;
  return result;
}

}  // namespace nvsed
