#pragma once

// Transport-independent streaming detection session. A client declares the
// audio format, then sends PCM chunks (binary messages) and JSON control
// messages; the session answers with JSON messages. docs/protocol.md has the
// full schema.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvsed/events.hpp"
#include "nvsed/frontend.hpp"
#include "nvsed/model.hpp"
#include "nvsed/personalize.hpp"
#include "nvsed/tcn.hpp"

namespace nvsed {

struct SessionOptions {
  int display_decimation = 10;  // frames per display summary (100 Hz -> 10 Hz)
  int top_k = 3;
  HeadFitConfig head_fit;
  std::shared_ptr<const NegativePool> negatives;  // enrollment negatives
  int tolerance = kLabelInflation;
  std::size_t max_enroll_samples = 60 * kSampleRate;
};

enum class MessageKind { kDisplay, kEvent, kControl, kError };

struct OutMessage {
  MessageKind kind = MessageKind::kControl;
  std::string text;  // JSON
};

class DetectionSession {
 public:
  DetectionSession(std::shared_ptr<const ModelWeights> weights, PostProcConfig optimized,
                   SessionOptions options = {});

  std::vector<OutMessage> on_text(std::string_view text);
  std::vector<OutMessage> on_binary(std::span<const std::uint8_t> payload);

  bool closed() const { return closed_; }
  const PostProcConfig& config() const { return postproc_.config(); }
  const ModelWeights& weights() const { return *weights_; }
  std::size_t frames_processed() const { return frames_; }

 private:
  std::vector<OutMessage> fail(std::string_view code, const std::string& message);
  std::vector<OutMessage> handle_start(const nlohmann::json& msg);
  std::vector<OutMessage> handle_config(const nlohmann::json& msg);
  std::vector<OutMessage> handle_enroll_finish();
  void process_audio(std::span<const float> samples, std::vector<OutMessage>& out);

  std::shared_ptr<const ModelWeights> weights_;
  PostProcConfig optimized_;
  SessionOptions options_;
  ClassSet classes_;
  StreamingFrontend frontend_;
  StreamSession model_;
  PostProcessor postproc_;
  bool started_ = false;
  bool closed_ = false;
  std::size_t frames_ = 0;

  // Display decimation window: per-class max over the pending frames.
  std::vector<float> window_max_;
  int window_count_ = 0;

  struct Enrollment {
    int cls = -1;
    int shots = 5;
    std::vector<float> samples;
  };
  std::optional<Enrollment> enrollment_;
};

// Short content hash of the serialized weights.
std::string model_version(const ModelWeights& weights);
nlohmann::json health_json(const ModelWeights& weights);

}  // namespace nvsed
