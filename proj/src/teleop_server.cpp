#include "arbiter/teleop_server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <deque>

namespace arbiter {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, std::string id, const ModelSet& models, const WorldConfig& world,
             const ServerOptions& options, std::size_t& finished_counter)
      : ws_(std::move(socket)),
        timer_(ws_.get_executor()),
        session_(std::move(id), models, world, options.session),
        period_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(options.tick_seconds))),
        finished_counter_(finished_counter) {}

  void start() {
    ws_.text(true);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->start_ = std::chrono::steady_clock::now();
      self->next_tick_ = self->start_ + self->period_;
      self->read();
      self->schedule_tick();
    });
  }

  void close() {
    closed_ = true;
    timer_.cancel();
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  double now() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      for (auto& reply : self->session_.handle_message(text, self->now())) self->send(reply.dump());
      self->read();
    });
  }

  void schedule_tick() {
    timer_.expires_at(next_tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      self->next_tick_ += self->period_;
      const std::size_t before = self->session_.finished_episodes().size();
      for (auto& m : self->session_.tick(self->now())) self->send(m.dump());
      self->finished_counter_ += self->session_.finished_episodes().size() - before;
      self->schedule_tick();
    });
  }

  void send(std::string text) {
    if (closed_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write();
  }

  void write() {
    ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  asio::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  Session session_;
  std::chrono::steady_clock::duration period_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point next_tick_;
  std::size_t& finished_counter_;
  bool closed_ = false;
};

}  // namespace

struct TeleopServer::Impl {
  Impl(const ModelSet& m, const WorldConfig& w, ServerOptions o) : models(m), world(w), options(std::move(o)) {}

  const ModelSet& models;
  WorldConfig world;
  ServerOptions options;
  asio::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::vector<std::weak_ptr<Connection>> connections;
  std::size_t finished = 0;
  int next_id = 0;

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto conn = std::make_shared<Connection>(std::move(socket), std::to_string(next_id++), models, world, options,
                                               finished);
      connections.push_back(conn);
      conn->start();
      accept();
    });
  }
};

TeleopServer::TeleopServer(const ModelSet& models, const WorldConfig& world, ServerOptions options)
    : impl_(std::make_unique<Impl>(models, world, std::move(options))) {
  if (!(impl_->options.tick_seconds > 0.0)) throw ConfigError("tick period must be positive");
  // Fail early on a bad mode or model set rather than on the first connection.
  Session probe("probe", models, world, impl_->options.session);
  const tcp::endpoint ep(asio::ip::make_address(impl_->options.address), impl_->options.port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(asio::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen();
}

TeleopServer::~TeleopServer() = default;

unsigned short TeleopServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void TeleopServer::run() {
  impl_->accept();
  impl_->ioc.run();
}

void TeleopServer::stop() {
  asio::post(impl_->ioc, [impl = impl_.get()] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    for (auto& w : impl->connections)
      if (auto c = w.lock()) c->close();
    impl->ioc.stop();
  });
}

std::size_t TeleopServer::finished_episodes() const { return impl_->finished; }

}  // namespace arbiter
