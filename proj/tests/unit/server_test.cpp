#include <gtest/gtest.h>

#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "nvsed/audio.hpp"
#include "nvsed/events.hpp"
#include "nvsed/server.hpp"
#include "nvsed/tcn.hpp"
#include "test_util.hpp"

namespace nvsed {
namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/session");
  }

  void text(const json& j) {
    ws_.text(true);
    ws_.write(net::buffer(j.dump()));
  }

  void audio(std::span<const float> samples) {
    std::vector<std::uint8_t> frame(4 + 2 * samples.size());
    const auto n = static_cast<std::uint32_t>(samples.size());
    for (int i = 0; i < 4; ++i) frame[i] = static_cast<std::uint8_t>(n >> (8 * i));
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto v = static_cast<std::uint16_t>(float_to_pcm16(samples[i]));
      frame[4 + 2 * i] = static_cast<std::uint8_t>(v & 0xFF);
      frame[5 + 2 * i] = static_cast<std::uint8_t>(v >> 8);
    }
    ws_.binary(true);
    ws_.write(net::buffer(frame));
  }

  // Next message, or null once the server has closed the connection.
  std::optional<json> next() {
    beast::flat_buffer buf;
    beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return std::nullopt;
    return json::parse(beast::buffers_to_string(buf.data()));
  }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

std::string http_get(unsigned short port, const std::string& target, int* status) {
  net::io_context ioc;
  tcp::resolver resolver(ioc);
  beast::tcp_stream stream(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  *status = static_cast<int>(res.result_int());
  return res.body();
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    weights = std::make_shared<const ModelWeights>(testing::random_weights(testing::tiny_spec(16, 4, 2), 21, 0.2f));
    config = PostProcConfig::defaults();
    config.theta.fill(0.52f);
    config.tau.fill(2);
    config.theta_bg = 0.99f;
    config.refractory = 10;
    clip = testing::noise_clip(32000, 8, 0.2);
    for (auto& s : clip.samples) s = pcm16_to_float(float_to_pcm16(s));
  }

  std::shared_ptr<const ModelWeights> weights;
  PostProcConfig config;
  AudioClip clip;
};

const json kStart = {{"type", "start"}, {"format", "pcm_s16le"}, {"sample_rate", 16000}, {"channels", 1}};

// Streams `clip`, stops, and returns every message until the server closes.
std::vector<json> run_session(unsigned short port, const AudioClip& clip) {
  Client c(port);
  c.text(kStart);
  for (std::size_t i = 0; i < clip.samples.size(); i += 1600) {
    c.audio(std::span<const float>(clip.samples.data() + i, std::min<std::size_t>(1600, clip.samples.size() - i)));
  }
  c.text({{"type", "stop"}});
  std::vector<json> all;
  while (auto m = c.next()) all.push_back(*m);
  return all;
}

std::vector<Event> events_of(const std::vector<json>& msgs, const ClassSet& classes) {
  std::vector<Event> out;
  for (const auto& m : msgs)
    if (m.at("type") == "event") out.push_back({classes.index_of(m.at("class").get<std::string>()), m.at("frame")});
  return out;
}

TEST_F(ServerTest, HealthAndUnknownRoutes) {
  Server server(weights, config);
  server.start();
  int status = 0;
  const json h = json::parse(http_get(server.port(), "/health", &status));
  EXPECT_EQ(status, 200);
  EXPECT_EQ(h.at("model_version"), model_version(*weights));
  http_get(server.port(), "/nothing", &status);
  EXPECT_EQ(status, 404);
  server.stop();
}

TEST_F(ServerTest, WebSocketSessionMatchesOfflineProcessing) {
  Server server(weights, config);
  server.start();
  const auto offline = process(forward(*weights, compute_features(clip)).probs, config);
  ASSERT_FALSE(offline.empty());
  const auto msgs = run_session(server.port(), clip);
  ASSERT_FALSE(msgs.empty());
  EXPECT_EQ(msgs.front().at("type"), "started");
  EXPECT_EQ(msgs.back().at("type"), "stopped");
  EXPECT_EQ(events_of(msgs, weights->classes), offline);
  std::size_t displays = 0;
  for (const auto& m : msgs) displays += m.at("type") == "display";
  EXPECT_EQ(displays, num_frames(clip.samples.size()) / 10);
  server.stop();
}

TEST_F(ServerTest, ConcurrentSessionsAreIndependent) {
  ServerOptions opts;
  opts.threads = 3;
  Server server(weights, config, opts);
  server.start();
  const auto offline = process(forward(*weights, compute_features(clip)).probs, config);
  std::vector<std::vector<json>> results(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] { results[i] = run_session(server.port(), clip); });
  }
  for (auto& t : threads) t.join();
  for (const auto& r : results) EXPECT_EQ(events_of(r, weights->classes), offline);
  server.stop();
}

TEST_F(ServerTest, DisplayIsDroppedUnderBackPressureButEventsAreNot) {
  ServerOptions opts;
  opts.max_pending_display = 0;
  Server server(weights, config, opts);
  server.start();
  const auto msgs = run_session(server.port(), clip);
  for (const auto& m : msgs) EXPECT_NE(m.at("type"), "display");
  EXPECT_EQ(events_of(msgs, weights->classes), process(forward(*weights, compute_features(clip)).probs, config));
  server.stop();
}

TEST_F(ServerTest, FatalErrorIsDeliveredBeforeClose) {
  Server server(weights, config);
  server.start();
  Client c(server.port());
  c.text({{"type", "start"}, {"format", "opus"}, {"sample_rate", 16000}, {"channels", 1}});
  const auto m = c.next();
  ASSERT_TRUE(m);
  EXPECT_EQ(m->at("code"), "unsupported_format");
  EXPECT_FALSE(c.next());
  server.stop();
}

}  // namespace
}  // namespace nvsed
