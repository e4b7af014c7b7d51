#include "nvsed/server.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "nvsed/error.hpp"

namespace nvsed {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

struct Shared {
  std::shared_ptr<const ModelWeights> weights;
  PostProcConfig optimized;
  ServerOptions options;
  std::string health;
};

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket&& socket, std::shared_ptr<const Shared> shared)
      : ws_(std::move(socket)),
        shared_(std::move(shared)),
        session_(shared_->weights, shared_->optimized, shared_->options.session) {}

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(1 << 24);
    ws_.async_accept(req, beast::bind_front_handler(&WsConnection::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    read();
  }

  void read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;  // closed by the client or failed; the connection ends here
    const auto data = buffer_.cdata();
    std::vector<OutMessage> out;
    if (ws_.got_text()) {
      out = session_.on_text(std::string_view(static_cast<const char*>(data.data()), data.size()));
    } else {
      out = session_.on_binary(std::span<const std::uint8_t>(static_cast<const std::uint8_t*>(data.data()), data.size()));
    }
    buffer_.consume(buffer_.size());
    for (auto& m : out) enqueue(std::move(m));
    if (session_.closed()) {
      closing_ = true;
      if (queue_.empty() && !writing_) close();
      return;
    }
    read();
  }

  void enqueue(OutMessage m) {
    if (m.kind == MessageKind::kDisplay) {
      if (pending_display_ >= shared_->options.max_pending_display) return;  // lagging client
      ++pending_display_;
    }
    queue_.push_back(std::move(m));
    if (!writing_) write_next();
  }

  void write_next() {
    if (queue_.empty()) {
      writing_ = false;
      if (closing_) close();
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front().text),
                    beast::bind_front_handler(&WsConnection::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (queue_.front().kind == MessageKind::kDisplay) --pending_display_;
    queue_.pop_front();
    write_next();
  }

  void close() {
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<const Shared> shared_;
  DetectionSession session_;
  beast::flat_buffer buffer_;
  std::deque<OutMessage> queue_;
  std::size_t pending_display_ = 0;
  bool writing_ = false;
  bool closing_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, std::shared_ptr<const Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/session") {
        stream_.expires_never();
        std::make_shared<WsConnection>(stream_.release_socket(), shared_)->start(std::move(req_));
        return;
      }
      return respond(http::status::not_found, R"({"error":"websocket endpoint is /session"})");
    }
    if (req_.method() == http::verb::get && req_.target() == "/health") {
      return respond(http::status::ok, shared_->health);
    }
    respond(http::status::not_found, R"({"error":"not found"})");
  }

  void respond(http::status status, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::content_type, "application/json");
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  std::shared_ptr<const Shared> shared_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct Server::Impl {
  std::shared_ptr<const Shared> shared;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::vector<std::thread> threads;
  std::mutex mu;
  std::condition_variable cv;
  bool running = false;

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpConnection>(std::move(socket), shared)->start();
      accept();
    });
  }
};

Server::Server(std::shared_ptr<const ModelWeights> weights, PostProcConfig optimized, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
  if (!weights) throw Error(ErrorCode::kInvalidArgument, "server needs weights");
  validate_weights(*weights);
  optimized.validate();
  auto shared = std::make_shared<Shared>();
  shared->health = health_json(*weights).dump();
  shared->weights = std::move(weights);
  shared->optimized = optimized;
  shared->options = std::move(options);
  impl_->shared = std::move(shared);
}

Server::~Server() { stop(); }

void Server::start() {
  const auto& opt = impl_->shared->options;
  const tcp::endpoint endpoint(net::ip::make_address(opt.address), opt.port);
  auto& acc = impl_->acceptor;
  acc.open(endpoint.protocol());
  acc.set_option(net::socket_base::reuse_address(true));
  acc.bind(endpoint);
  acc.listen(net::socket_base::max_listen_connections);
  impl_->accept();
  {
    std::lock_guard lock(impl_->mu);
    impl_->running = true;
  }
  for (int i = 0; i < std::max(1, opt.threads); ++i) impl_->threads.emplace_back([this] { impl_->ioc.run(); });
}

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::stop() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->mu);
    if (!impl_->running) return;
    impl_->running = false;
  }
  impl_->ioc.stop();
  for (auto& t : impl_->threads)
    if (t.joinable()) t.join();
  impl_->threads.clear();
  impl_->cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->cv.wait(lock, [this] { return !impl_->running; });
}

}  // namespace nvsed
