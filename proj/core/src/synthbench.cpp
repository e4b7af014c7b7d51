#include "nvsed/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "nvsed/classes.hpp"
#include "nvsed/error.hpp"
#include "nvsed/rng.hpp"

namespace nvsed {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFs = kSampleRate;
constexpr double kSoundRms = 0.08;  // at gain 0 dB

// Direct form I biquad with RBJ cookbook coefficients.
class Biquad {
 public:
  static Biquad lowpass(double f, double q) { return make(f, q, 0); }
  static Biquad highpass(double f, double q) { return make(f, q, 1); }
  static Biquad bandpass(double f, double q) { return make(f, q, 2); }

  double operator()(double x) {
    const double y = b0_ * x + b1_ * x1_ + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  static Biquad make(double f, double q, int type) {
    f = std::clamp(f, 10.0, 0.45 * kFs);
    const double w = 2.0 * kPi * f / kFs;
    const double alpha = std::sin(w) / (2.0 * q);
    const double c = std::cos(w);
    double b0 = 0, b1 = 0, b2 = 0;
    switch (type) {
      case 0:
        b0 = (1 - c) / 2;
        b1 = 1 - c;
        b2 = (1 - c) / 2;
        break;
      case 1:
        b0 = (1 + c) / 2;
        b1 = -(1 + c);
        b2 = (1 + c) / 2;
        break;
      default:
        b0 = alpha;
        b2 = -alpha;
        break;
    }
    const double a0 = 1 + alpha;
    Biquad bq;
    bq.b0_ = b0 / a0;
    bq.b1_ = b1 / a0;
    bq.b2_ = b2 / a0;
    bq.a1_ = -2 * c / a0;
    bq.a2_ = (1 - alpha) / a0;
    return bq;
  }

  double b0_ = 1, b1_ = 0, b2_ = 0, a1_ = 0, a2_ = 0;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

// Paul Kellet's economy pink filter over white Gaussian noise.
class PinkNoise {
 public:
  explicit PinkNoise(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    const double w = rng_.normal();
    b0_ = 0.99765 * b0_ + w * 0.0990460;
    b1_ = 0.96300 * b1_ + w * 0.2965164;
    b2_ = 0.57000 * b2_ + w * 1.0526913;
    return (b0_ + b1_ + b2_ + w * 0.1848) * 0.2;
  }

 private:
  Rng rng_;
  double b0_ = 0, b1_ = 0, b2_ = 0;
};

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

void scale_to_rms(std::vector<double>& x, double target) {
  const double r = rms(x);
  if (r <= 0.0) return;
  for (auto& v : x) v *= target / r;
}

// Raised-cosine fade in and out over `ramp` samples.
void apply_ramps(std::vector<double>& x, std::size_t ramp) {
  ramp = std::min(ramp, x.size() / 2);
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(kPi * (i + 0.5) / ramp);
    x[i] *= g;
    x[x.size() - 1 - i] *= g;
  }
}

std::vector<double> synth_sound(const SynthClass& cls, const UserProfile& user, Rng& rng) {
  const double ms = rng.uniform(cls.min_ms, cls.max_ms) * user.duration;
  const auto n = static_cast<std::size_t>(std::lround(ms * kFs / 1000.0));
  const double f = cls.frequency_hz * user.pitch;
  std::vector<double> x(n, 0.0);
  switch (cls.kind) {
    case SoundKind::kClick: {
      // Irregular impulses 4-9 ms apart, each ringing a resonator at f.
      const double decay = 0.0018 * user.brightness;
      double t0 = 0.0;
      while (t0 < static_cast<double>(n)) {
        const auto start = static_cast<std::size_t>(t0);
        const double amp = rng.uniform(0.7, 1.0);
        for (std::size_t i = start; i < n; ++i) {
          const double t = (static_cast<double>(i) - t0) / kFs;
          if (t > 8 * decay) break;
          x[i] += amp * std::exp(-t / decay) * std::sin(2 * kPi * f * t);
        }
        t0 += kFs * rng.uniform(0.004, 0.009);
      }
      apply_ramps(x, 16);
      break;
    }
    case SoundKind::kPop: {
      Biquad lp1 = Biquad::lowpass(f, 0.8);
      Biquad lp2 = Biquad::lowpass(f, 0.8);
      for (auto& v : x) v = lp2(lp1(rng.normal()));
      apply_ramps(x, 80);
      break;
    }
    case SoundKind::kTone: {
      const double h2 = 0.5 * user.brightness;
      const double h3 = 0.25 * user.brightness;
      const double vib_rate = rng.uniform(4.0, 6.0);
      const double vib_depth = 0.004;
      double phase = rng.uniform(0.0, 2 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kFs;
        const double inst = f * (1.0 + vib_depth * std::sin(2 * kPi * vib_rate * t));
        phase += 2 * kPi * inst / kFs;
        x[i] = std::sin(phase) + h2 * std::sin(2 * phase) + h3 * std::sin(3 * phase);
      }
      apply_ramps(x, 160);
      break;
    }
    case SoundKind::kHiss: {
      Biquad hp1 = Biquad::highpass(f, 0.7);
      Biquad hp2 = Biquad::highpass(f, 0.7);
      for (auto& v : x) v = hp2(hp1(rng.normal()));
      apply_ramps(x, 160);
      break;
    }
  }
  // Repetitions are never equally loud.
  scale_to_rms(x, kSoundRms * std::pow(10.0, (user.gain_db + rng.uniform(-4.0, 4.0)) / 20.0));
  return x;
}

AudioClip to_clip(const std::vector<double>& x, std::string source) {
  AudioClip clip;
  clip.source = std::move(source);
  clip.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    clip.samples[i] = static_cast<float>(std::clamp(x[i], -1.0, 1.0));
  }
  return clip;
}

// Frames whose central 10 ms block is centered inside [begin, end).
Segment frames_covering(std::size_t begin, std::size_t end, int label) {
  constexpr int kCenter = kWindowLength / 2;
  const auto first = static_cast<int>(
      std::ceil((static_cast<double>(begin) - kCenter) / static_cast<double>(kHopLength)));
  const auto last = static_cast<int>(
      std::floor((static_cast<double>(end) - 1.0 - kCenter) / static_cast<double>(kHopLength)));
  return {std::max(first, 0), last, label};
}

void add_noise_floor(std::vector<double>& x, double level, std::uint64_t seed) {
  PinkNoise pink(seed);
  std::vector<double> noise(x.size());
  for (auto& v : noise) v = pink();
  scale_to_rms(noise, level);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += noise[i];
}

std::string pad_index(std::size_t i, int width) {
  std::string s = std::to_string(i);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::vector<double> babble_voice(std::size_t n, Rng& rng) {
  std::vector<double> out(n, 0.0);
  const double base_f0 = rng.uniform(90.0, 240.0);
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.0, 0.3) * kFs);
  double phase = 0.0;
  while (pos < n) {
    // One word of 2-5 syllables, then a pause.
    const int syllables = rng.uniform_int(2, 5);
    for (int s = 0; s < syllables && pos < n; ++s) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.12, 0.28) * kFs);
      const double f1 = rng.uniform(300.0, 850.0);
      const double f2 = rng.uniform(900.0, 2400.0);
      const double f3 = rng.uniform(2400.0, 3200.0);
      Biquad r1 = Biquad::bandpass(f1, 5.0);
      Biquad r2 = Biquad::bandpass(f2, 8.0);
      Biquad r3 = Biquad::bandpass(f3, 10.0);
      const double f0_start = base_f0 * rng.uniform(0.85, 1.2);
      const double f0_end = base_f0 * rng.uniform(0.8, 1.15);
      std::vector<double> syl(len);
      for (std::size_t i = 0; i < len; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(len);
        const double f0 = f0_start + (f0_end - f0_start) * u;
        phase += f0 / kFs;
        double src = 0.02 * rng.normal();
        if (phase >= 1.0) {
          phase -= 1.0;
          src += 1.0;
        }
        syl[i] = r1(src) + 0.6 * r2(src) + 0.3 * r3(src);
      }
      apply_ramps(syl, std::min<std::size_t>(len / 4, 480));
      scale_to_rms(syl, rng.uniform(0.5, 1.0));
      for (std::size_t i = 0; i < len && pos + i < n; ++i) out[pos + i] += syl[i];
      pos += len + static_cast<std::size_t>(rng.uniform(0.0, 0.05) * kFs);
    }
    pos += static_cast<std::size_t>(rng.uniform(0.1, 0.6) * kFs);
  }
  return out;
}

}  // namespace

std::vector<SynthClass> default_synth_classes() {
  return {
      {"click", SoundKind::kClick, 4000.0, 30.0, 60.0},
      {"pop", SoundKind::kPop, 250.0, 50.0, 90.0},
      {"oo", SoundKind::kTone, 300.0, 100.0, 180.0},
      {"eh", SoundKind::kTone, 800.0, 100.0, 180.0},
      {"sh", SoundKind::kHiss, 3500.0, 100.0, 180.0},
  };
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidArgument, "synth spec: " + what);
  };
  if (classes.empty()) fail("no classes");
  if (train_users <= 0 && eval_users <= 0) fail("no users");
  if (train_users < 0 || eval_users < 0) fail("user counts must be non-negative");
  if (repetitions <= 0) fail("repetitions must be positive");
  if (!(gap_seconds > 0.0) || gap_jitter_seconds < 0.0 || gap_jitter_seconds >= gap_seconds) {
    fail("gap must be positive and larger than its jitter");
  }
  if (!(lead_seconds >= 0.1)) fail("lead_seconds must be at least 0.1");
  if (!(snr_min_db <= snr_max_db)) fail("snr range is empty");
  if (aggressor_seconds < 0.0 || !(aggressor_clip_seconds >= 1.0)) fail("bad aggressor durations");
  if (!(user_pitch_spread >= 0.0 && user_pitch_spread < 0.5)) fail("user_pitch_spread must be in [0, 0.5)");
  if (!(shift_factor > 0.0)) fail("shift_factor must be positive");
  const ClassSet names;
  for (const auto& c : classes) {
    const int idx = names.index_of(c.name);
    if (!is_sound_class(idx)) fail(c.name + " is not a mouth-sound class");
    if (!(c.frequency_hz > 0.0 && c.frequency_hz < kFs / 2)) fail(c.name + ": frequency out of range");
    if (!(c.min_ms >= 30.0 && c.min_ms <= c.max_ms)) fail(c.name + ": durations must be >= 30 ms and ordered");
  }
}

namespace {

std::string kind_name(SoundKind k) {
  switch (k) {
    case SoundKind::kClick: return "click";
    case SoundKind::kPop: return "pop";
    case SoundKind::kTone: return "tone";
    case SoundKind::kHiss: return "hiss";
  }
  return "tone";
}

SoundKind kind_from_name(const std::string& s) {
  if (s == "click") return SoundKind::kClick;
  if (s == "pop") return SoundKind::kPop;
  if (s == "tone") return SoundKind::kTone;
  if (s == "hiss") return SoundKind::kHiss;
  throw Error(ErrorCode::kInvalidArgument, "unknown sound kind '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const SynthSpec& s) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"name", c.name},
                       {"kind", kind_name(c.kind)},
                       {"frequency_hz", c.frequency_hz},
                       {"min_ms", c.min_ms},
                       {"max_ms", c.max_ms}});
  }
  j = nlohmann::json{{"seed", s.seed},
                     {"classes", classes},
                     {"repetitions", s.repetitions},
                     {"gap_seconds", s.gap_seconds},
                     {"gap_jitter_seconds", s.gap_jitter_seconds},
                     {"lead_seconds", s.lead_seconds},
                     {"snr_min_db", s.snr_min_db},
                     {"snr_max_db", s.snr_max_db},
                     {"train_users", s.train_users},
                     {"eval_users", s.eval_users},
                     {"aggressor_seconds", s.aggressor_seconds},
                     {"aggressor_clip_seconds", s.aggressor_clip_seconds},
                     {"user_pitch_spread", s.user_pitch_spread},
                     {"shift_factor", s.shift_factor}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  SynthSpec d;
  s.seed = j.value("seed", d.seed);
  if (j.contains("classes")) {
    s.classes.clear();
    for (const auto& c : j.at("classes")) {
      s.classes.push_back({c.at("name").get<std::string>(), kind_from_name(c.at("kind").get<std::string>()),
                           c.at("frequency_hz").get<double>(), c.at("min_ms").get<double>(),
                           c.at("max_ms").get<double>()});
    }
  } else {
    s.classes = d.classes;
  }
  s.repetitions = j.value("repetitions", d.repetitions);
  s.gap_seconds = j.value("gap_seconds", d.gap_seconds);
  s.gap_jitter_seconds = j.value("gap_jitter_seconds", d.gap_jitter_seconds);
  s.lead_seconds = j.value("lead_seconds", d.lead_seconds);
  s.snr_min_db = j.value("snr_min_db", d.snr_min_db);
  s.snr_max_db = j.value("snr_max_db", d.snr_max_db);
  s.train_users = j.value("train_users", d.train_users);
  s.eval_users = j.value("eval_users", d.eval_users);
  s.aggressor_seconds = j.value("aggressor_seconds", d.aggressor_seconds);
  s.aggressor_clip_seconds = j.value("aggressor_clip_seconds", d.aggressor_clip_seconds);
  s.user_pitch_spread = j.value("user_pitch_spread", d.user_pitch_spread);
  s.shift_factor = j.value("shift_factor", d.shift_factor);
}

UserProfile make_user(const SynthSpec& spec, std::uint64_t user_seed, bool shifted) {
  Rng rng(user_seed);
  UserProfile u;
  u.id = (shifted ? "shifted_" : "user_") + std::to_string(user_seed % 1000000);
  u.pitch = 1.0 + rng.uniform(-spec.user_pitch_spread, spec.user_pitch_spread);
  if (shifted) u.pitch *= spec.shift_factor;
  u.duration = rng.uniform(0.85, 1.15);
  u.gain_db = rng.uniform(-6.0, 6.0);
  u.brightness = rng.uniform(0.8, 1.2);
  return u;
}

std::vector<int> synth_class_indices(const SynthSpec& spec) {
  const ClassSet names;
  std::vector<int> out;
  for (const auto& c : spec.classes) out.push_back(names.index_of(c.name));
  return out;
}

LabeledClip synth_sound_clip(const SynthSpec& spec, const UserProfile& user, int class_slot, int repetitions,
                             std::uint64_t seed) {
  if (class_slot < 0 || class_slot >= static_cast<int>(spec.classes.size())) {
    throw Error(ErrorCode::kInvalidArgument, "class slot " + std::to_string(class_slot) + " out of range");
  }
  if (repetitions <= 0) throw Error(ErrorCode::kInvalidArgument, "repetitions must be positive");
  const SynthClass& cls = spec.classes[class_slot];
  const int label = ClassSet().index_of(cls.name);
  Rng rng(seed);

  std::vector<double> x(static_cast<std::size_t>(spec.lead_seconds * kFs), 0.0);
  std::vector<Segment> segments;
  for (int r = 0; r < repetitions; ++r) {
    const std::vector<double> s = synth_sound(cls, user, rng);
    const std::size_t begin = x.size();
    x.insert(x.end(), s.begin(), s.end());
    segments.push_back(frames_covering(begin, x.size(), label));
    const double gap = r + 1 < repetitions
                           ? spec.gap_seconds + rng.uniform(-spec.gap_jitter_seconds, spec.gap_jitter_seconds)
                           : spec.lead_seconds;
    x.resize(x.size() + static_cast<std::size_t>(gap * kFs), 0.0);
  }
  const double snr_db = rng.uniform(spec.snr_min_db, spec.snr_max_db);
  const double level = kSoundRms * std::pow(10.0, (user.gain_db - snr_db) / 20.0);
  add_noise_floor(x, level, rng.next_u64());
  return make_sound_clip(to_clip(x, user.id + "_" + cls.name), label, std::move(segments));
}

LabeledClip synth_aggressor_clip(AggressorKind kind, double seconds, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(seconds * kFs);
  std::vector<double> x(n, 0.0);
  std::string name;
  switch (kind) {
    case AggressorKind::kPinkNoise: {
      name = "pink";
      PinkNoise pink(rng.next_u64());
      for (auto& v : x) v = pink();
      // Slow level drift.
      const double rate = rng.uniform(0.05, 0.3);
      const double depth = rng.uniform(0.0, 0.5);
      for (std::size_t i = 0; i < n; ++i) x[i] *= 1.0 + depth * std::sin(2 * kPi * rate * i / kFs);
      scale_to_rms(x, rng.uniform(0.03, 0.15));
      break;
    }
    case AggressorKind::kBabble: {
      name = "babble";
      const int voices = rng.uniform_int(1, 3);
      for (int v = 0; v < voices; ++v) {
        const auto voice = babble_voice(n, rng);
        for (std::size_t i = 0; i < n; ++i) x[i] += voice[i];
      }
      scale_to_rms(x, rng.uniform(0.03, 0.12));
      add_noise_floor(x, 0.002, rng.next_u64());
      break;
    }
    case AggressorKind::kChirps: {
      name = "chirps";
      // Short fast sweeps (4-12 octaves per second) in bursts, bird-like;
      // never steady enough to pass for a held tone.
      std::size_t pos = 0;
      while (pos < n) {
        pos += static_cast<std::size_t>(rng.uniform(0.2, 1.2) * kFs);
        const int burst = rng.uniform_int(1, 6);
        const double amp = rng.uniform(0.03, 0.15);
        for (int b = 0; b < burst && pos < n; ++b) {
          const auto len = static_cast<std::size_t>(rng.uniform(0.08, 0.4) * kFs);
          const double f0 = std::exp(rng.uniform(std::log(200.0), std::log(5000.0)));
          const double octaves = rng.uniform(4.0, 12.0) * static_cast<double>(len) / kFs;
          double f1 = f0 * std::pow(2.0, rng.bernoulli(0.5) ? octaves : -octaves);
          if (f1 < 100.0 || f1 > 7000.0) f1 = f0 * f0 / f1;
          f1 = std::clamp(f1, 100.0, 7000.0);
          std::vector<double> c(len);
          double phase = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            const double u = static_cast<double>(i) / static_cast<double>(len);
            phase += 2 * kPi * f0 * std::pow(f1 / f0, u) / kFs;
            c[i] = std::sin(phase);
          }
          apply_ramps(c, 80);
          for (std::size_t i = 0; i < len && pos + i < n; ++i) x[pos + i] += amp * c[i];
          pos += len + static_cast<std::size_t>(rng.uniform(0.02, 0.1) * kFs);
        }
      }
      // The bed sits above any sound clip's noise floor.
      add_noise_floor(x, rng.uniform(0.02, 0.06), rng.next_u64());
      break;
    }
  }
  AudioClip clip = to_clip(x, name + "_" + pad_index(seed % 100000, 5));
  return kind == AggressorKind::kBabble ? annotate_speech_clip(std::move(clip))
                                        : annotate_background_clip(std::move(clip));
}

std::vector<LabeledClip> synth_aggressors(double total_seconds, double clip_seconds, std::uint64_t seed) {
  std::vector<LabeledClip> out;
  constexpr AggressorKind kCycle[] = {AggressorKind::kPinkNoise, AggressorKind::kBabble, AggressorKind::kChirps};
  double covered = 0.0;
  for (std::size_t i = 0; covered < total_seconds; ++i) {
    const double len = std::min(clip_seconds, std::max(1.0, total_seconds - covered));
    LabeledClip c = synth_aggressor_clip(kCycle[i % 3], len, derive_seed(seed, i));
    c.clip.source = "aggressor_" + pad_index(i, 4) + "_" + c.clip.source.substr(0, c.clip.source.find('_'));
    out.push_back(std::move(c));
    covered += len;
  }
  return out;
}

Corpus generate_corpus(const SynthSpec& spec) {
  spec.validate();
  Corpus corpus;
  auto make_users = [&](int count, std::uint64_t salt, const std::string& prefix, std::vector<LabeledClip>& out) {
    for (int u = 0; u < count; ++u) {
      const std::uint64_t user_seed = derive_seed(spec.seed, salt + static_cast<std::uint64_t>(u));
      UserProfile user = make_user(spec, user_seed, false);
      user.id = prefix + pad_index(static_cast<std::size_t>(u), 2);
      for (int slot = 0; slot < static_cast<int>(spec.classes.size()); ++slot) {
        LabeledClip c = synth_sound_clip(spec, user, slot, spec.repetitions,
                                         derive_seed(user_seed, static_cast<std::uint64_t>(slot)));
        c.user = user.id;
        out.push_back(std::move(c));
      }
    }
  };
  make_users(spec.train_users, 100, "train_u", corpus.train);
  make_users(spec.eval_users, 5000, "eval_u", corpus.eval);
  corpus.aggressors = synth_aggressors(spec.aggressor_seconds, spec.aggressor_clip_seconds,
                                       derive_seed(spec.seed, 9000));
  return corpus;
}

double spectral_centroid(const AudioClip& clip, std::span<const Segment> segments) {
  constexpr std::size_t kBlock = 256;
  std::vector<double> window(kBlock);
  for (std::size_t i = 0; i < kBlock; ++i) window[i] = 0.5 - 0.5 * std::cos(2 * kPi * i / kBlock);
  double num = 0.0;
  double den = 0.0;
  for (const auto& s : segments) {
    const std::size_t begin = static_cast<std::size_t>(std::max(0, s.start_frame)) * kHopLength + kWindowLength / 2 -
                              kHopLength / 2;
    const std::size_t end = std::min(clip.samples.size(),
                                     static_cast<std::size_t>(s.end_frame + 1) * kHopLength + kWindowLength / 2);
    for (std::size_t b = begin; b + kBlock <= end; b += kBlock / 2) {
      for (std::size_t k = 1; k < kBlock / 2; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t i = 0; i < kBlock; ++i) {
          acc += window[i] * clip.samples[b + i] * std::polar(1.0, -2 * kPi * k * i / kBlock);
        }
        const double p = std::norm(acc);
        num += p * (static_cast<double>(k) * clip.sample_rate / kBlock);
        den += p;
      }
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace nvsed
