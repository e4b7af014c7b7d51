#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "nvsed/service.hpp"

namespace nvsed {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  int threads = 2;
  // Display summaries queued beyond this are dropped; events never are.
  std::size_t max_pending_display = 16;
  SessionOptions session;
};

// WebSocket endpoint "/session" speaking the DetectionSession protocol, plus
// "GET /health" on the same port.
class Server {
 public:
  Server(std::shared_ptr<const ModelWeights> weights, PostProcConfig optimized,
         ServerOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();  // binds and serves on background threads
  unsigned short port() const;
  void stop();
  void wait();   // blocks until stop()

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nvsed
