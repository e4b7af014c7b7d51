#include "nvsed/service.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>

#include "nvsed/annotate.hpp"
#include "nvsed/audio.hpp"
#include "nvsed/error.hpp"

namespace nvsed {

namespace {

// Shortest decimal that round-trips the float, so 0.6f is echoed as 0.6.
double float_json(float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

OutMessage message(MessageKind kind, const nlohmann::json& j) { return {kind, j.dump()}; }

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string model_version(const ModelWeights& weights) {
  const auto bytes = serialize_weights(weights);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json health_json(const ModelWeights& weights) {
  nlohmann::json j;
  j["status"] = "ok";
  j["model_version"] = model_version(weights);
  j["format_version"] = kWeightFormatVersion;
  j["classes"] = weights.classes.names();
  j["spec"] = weights.spec;
  if (weights.user_id) j["user_id"] = *weights.user_id;
  return j;
}

DetectionSession::DetectionSession(std::shared_ptr<const ModelWeights> weights, PostProcConfig optimized,
                                   SessionOptions options)
    : weights_(std::move(weights)),
      optimized_(optimized),
      options_(std::move(options)),
      classes_(weights_ ? weights_->classes : ClassSet()),
      model_(weights_),
      postproc_(optimized) {
  if (options_.display_decimation < 1) throw Error(ErrorCode::kInvalidArgument, "display decimation must be >= 1");
  window_max_.assign(kNumClasses, 0.0f);
}

std::vector<OutMessage> DetectionSession::fail(std::string_view code, const std::string& msg) {
  closed_ = true;
  model_.close();
  return {message(MessageKind::kError, {{"type", "error"}, {"code", code}, {"message", msg}, {"fatal", true}})};
}

std::vector<OutMessage> DetectionSession::on_text(std::string_view text) {
  if (closed_) return {};
  nlohmann::json msg = nlohmann::json::parse(text, nullptr, false);
  if (msg.is_discarded() || !msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    return fail("malformed", "control messages are JSON objects with a string \"type\"");
  }
  const std::string type = msg["type"];
  try {
    if (type == "start") return handle_start(msg);
    if (!started_) return fail("not_started", "the first message must be {\"type\":\"start\", ...}");
    if (type == "config") return handle_config(msg);
    if (type == "reset") {
      postproc_.set_config(optimized_);
      return {message(MessageKind::kControl, {{"type", "config_reset"},
                                              {"effective_frame", frames_},
                                              {"config", to_json(optimized_, classes_)}})};
    }
    if (type == "enroll_begin") {
      const int cls = classes_.index_of(msg.at("class").get<std::string>());
      if (!is_sound_class(cls)) throw Error(ErrorCode::kInvalidArgument, "enrollment class must be a sound class");
      const int shots = msg.value("shots", 5);
      if (shots < 1 || shots > 5) throw Error(ErrorCode::kInvalidArgument, "shots must be in [1, 5]");
      enrollment_ = Enrollment{cls, shots, {}};
      return {message(MessageKind::kControl,
                      {{"type", "enroll_ready"}, {"class", classes_.name(cls)}, {"shots", shots}})};
    }
    if (type == "enroll_end") return handle_enroll_finish();
    if (type == "enroll_cancel") {
      enrollment_.reset();
      return {message(MessageKind::kControl, {{"type", "enroll_cancelled"}})};
    }
    if (type == "stop") {
      closed_ = true;
      model_.close();
      return {message(MessageKind::kControl, {{"type", "stopped"}, {"frames", frames_}})};
    }
    return fail("unknown_type", "unknown message type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    return fail("malformed", std::string("bad '") + type + "' message: " + e.what());
  } catch (const Error& e) {
    // Rejected requests leave the session running.
    return {message(MessageKind::kError, {{"type", "error"},
                                          {"code", to_string(e.code())},
                                          {"message", e.what()},
                                          {"request", type},
                                          {"fatal", false}})};
  }
}

std::vector<OutMessage> DetectionSession::handle_start(const nlohmann::json& msg) {
  if (started_) return fail("protocol", "session already started");
  const std::string format = msg.value("format", "");
  const int rate = msg.value("sample_rate", 0);
  const int channels = msg.value("channels", 0);
  if (format != "pcm_s16le" || rate != kSampleRate || channels != 1) {
    return fail("unsupported_format", "only {format: pcm_s16le, sample_rate: 16000, channels: 1} is accepted");
  }
  started_ = true;
  return {message(MessageKind::kControl, {{"type", "started"},
                                          {"model_version", model_version(*weights_)},
                                          {"classes", classes_.names()},
                                          {"display_hz", 100 / options_.display_decimation},
                                          {"config", to_json(postproc_.config(), classes_)}})};
}

std::vector<OutMessage> DetectionSession::handle_config(const nlohmann::json& msg) {
  PostProcConfig cfg = postproc_.config();
  nlohmann::json ack = {{"type", "config_ack"}};
  if (msg.contains("class")) {
    const std::string name = msg["class"].get<std::string>();
    const int c = classes_.index_of(name);
    if (!is_sound_class(c)) throw Error(ErrorCode::kInvalidArgument, "'" + name + "' is not a sound class");
    if (msg.contains("theta")) cfg.theta[c] = msg["theta"].get<float>();
    if (msg.contains("tau")) cfg.tau[c] = msg["tau"].get<int>();
    if (msg.contains("active")) cfg.active[c] = msg["active"].get<bool>();
    ack["class"] = name;
    ack["theta"] = float_json(cfg.theta[c]);
    ack["tau"] = cfg.tau[c];
    ack["active"] = cfg.active[c];
  }
  if (msg.contains("theta_bg")) cfg.theta_bg = msg["theta_bg"].get<float>();
  postproc_.set_config(cfg);  // validates; throws on out-of-range values
  ack["theta_bg"] = float_json(cfg.theta_bg);
  ack["effective_frame"] = frames_;
  return {message(MessageKind::kControl, ack)};
}

std::vector<OutMessage> DetectionSession::on_binary(std::span<const std::uint8_t> payload) {
  if (closed_) return {};
  if (!started_) return fail("not_started", "audio sent before the start message");
  if (payload.size() < 4) return fail("malformed", "audio frame shorter than its 4-byte length prefix");
  const std::uint32_t count = static_cast<std::uint32_t>(payload[0]) | (static_cast<std::uint32_t>(payload[1]) << 8) |
                              (static_cast<std::uint32_t>(payload[2]) << 16) |
                              (static_cast<std::uint32_t>(payload[3]) << 24);
  if (payload.size() != 4 + 2 * static_cast<std::size_t>(count)) {
    return fail("malformed", "audio frame declares " + std::to_string(count) + " samples but carries " +
                                 std::to_string(payload.size() - 4) + " bytes");
  }
  std::vector<float> samples(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(payload[4 + 2 * i]) |
                                             (static_cast<std::uint16_t>(payload[5 + 2 * i]) << 8));
    samples[i] = pcm16_to_float(v);
  }

  std::vector<OutMessage> out;
  if (enrollment_) {
    auto& buf = enrollment_->samples;
    if (buf.size() + samples.size() > options_.max_enroll_samples) {
      enrollment_.reset();
      out.push_back(message(MessageKind::kError,
                            {{"type", "error"},
                             {"code", "enrollment_failed"},
                             {"message", "enrollment recording too long; start again with fewer repetitions"},
                             {"fatal", false}}));
      return out;
    }
    buf.insert(buf.end(), samples.begin(), samples.end());
    return out;
  }
  process_audio(samples, out);
  return out;
}

void DetectionSession::process_audio(std::span<const float> samples, std::vector<OutMessage>& out) {
  const FeatureMatrix feats = frontend_.push(samples);
  if (feats.empty()) return;
  const ForwardOutput fwd = model_.push(feats);
  for (std::size_t r = 0; r < fwd.probs.rows(); ++r) {
    const auto row = fwd.probs.row(r);
    const std::int64_t frame = static_cast<std::int64_t>(frames_++);
    if (auto e = postproc_.step(row)) {
      out.push_back(message(MessageKind::kEvent, {{"type", "event"},
                                                  {"class", classes_.name(e->cls)},
                                                  {"frame", e->frame},
                                                  {"t_ms", e->time_ms()}}));
    }
    for (int c = 0; c < kNumClasses; ++c) window_max_[c] = std::max(window_max_[c], row[c]);
    if (++window_count_ < options_.display_decimation) continue;

    std::vector<int> order;
    for (int c = 0; c < kNumSoundClasses; ++c) order.push_back(c);
    const auto k = static_cast<std::size_t>(std::clamp(options_.top_k, 0, kNumSoundClasses));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](int a, int b) { return window_max_[a] > window_max_[b] || (window_max_[a] == window_max_[b] && a < b); });
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t i = 0; i < k; ++i) {
      top.push_back({{"class", classes_.name(order[i])}, {"p", float_json(window_max_[order[i]])}});
    }
    out.push_back(message(MessageKind::kDisplay, {{"type", "display"},
                                                  {"t_ms", frame * kFrameMs},
                                                  {"top_k", top},
                                                  {"p_background", float_json(window_max_[kBackgroundClass])},
                                                  {"p_speech", float_json(window_max_[kSpeechClass])}}));
    std::fill(window_max_.begin(), window_max_.end(), 0.0f);
    window_count_ = 0;
  }
}

std::vector<OutMessage> DetectionSession::handle_enroll_finish() {
  if (!enrollment_) throw Error(ErrorCode::kInvalidArgument, "enroll_end without enroll_begin");
  Enrollment enr = std::move(*enrollment_);
  enrollment_.reset();
  const std::string name = classes_.name(enr.cls);
  auto failed = [&](const std::string& why) {
    return std::vector<OutMessage>{message(MessageKind::kError, {{"type", "error"},
                                                                 {"code", "enrollment_failed"},
                                                                 {"class", name},
                                                                 {"message", why},
                                                                 {"fatal", false}})};
  };
  if (enr.samples.size() < static_cast<std::size_t>(kWindowLength)) {
    return failed("no audio received; record the sound " + std::to_string(enr.shots) + " times and try again");
  }

  AudioClip clip{std::move(enr.samples), kSampleRate, "enrollment"};
  LabeledClip labeled = annotate_sound_clip(std::move(clip), enr.cls, options_.head_fit.inflate);
  if (labeled.segments.empty()) {
    return failed("no sound detected; try louder or closer, with a short pause between repetitions");
  }

  std::shared_ptr<const ModelWeights> personalized;
  try {
    const std::array<int, 1> cls{enr.cls};
    personalized = std::make_shared<const ModelWeights>(
        fit_head(*weights_, labeled, cls, enr.shots, options_.negatives.get(), options_.head_fit));
  } catch (const Error& e) {
    return failed(e.what());
  }

  // Repetitions beyond the requested shots are held out for scoring.
  const auto& segs = labeled.segments;
  const std::size_t used = std::min(segs.size(), static_cast<std::size_t>(enr.shots));
  const std::size_t cutoff = enrollment_frames(segs, enr.shots, labeled.feats.rows(), options_.head_fit);
  LabeledClip heldout;
  heldout.clip.samples.assign(std::max<std::size_t>(labeled.feats.rows() - cutoff, 0) * kHopLength, 0.0f);
  for (std::size_t i = used; i < segs.size(); ++i) {
    if (segs[i].start_frame < static_cast<int>(cutoff)) continue;
    heldout.segments.push_back({segs[i].start_frame - static_cast<int>(cutoff),
                                segs[i].end_frame - static_cast<int>(cutoff), segs[i].label});
  }
  std::optional<double> before, after;
  if (!heldout.segments.empty()) {
    const auto probs_before = forward(*weights_, labeled.feats).probs;
    const auto probs_after = forward(*personalized, labeled.feats).probs;
    const auto rows = labeled.feats.rows();
    before = one_active_f1(probs_before.slice_rows(cutoff, rows), heldout, enr.cls, postproc_.config(),
                           options_.tolerance);
    after = one_active_f1(probs_after.slice_rows(cutoff, rows), heldout, enr.cls, postproc_.config(),
                          options_.tolerance);
  }

  model_.swap_head(personalized);
  weights_ = personalized;
  return {message(MessageKind::kControl, {{"type", "enrolled"},
                                          {"class", name},
                                          {"shots_used", used},
                                          {"segments_found", segs.size()},
                                          {"heldout_segments", heldout.segments.size()},
                                          {"f1_before", optional_json(before)},
                                          {"f1_after", optional_json(after)},
                                          {"model_version", model_version(*weights_)}})};
}

}  // namespace nvsed
