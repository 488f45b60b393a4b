#pragma once

#include <chrono>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

#include "maskforge/model.hpp"

namespace maskforge {

/// Connection, handshake, protocol or timeout failure talking to a bridge.
/// `raw_response()` holds the offending line when one was received.
class BridgeError : public std::runtime_error {
 public:
  explicit BridgeError(const std::string& what, std::string raw_response = {})
      : std::runtime_error(what), raw_(std::move(raw_response)) {}
  const std::string& raw_response() const { return raw_; }

 private:
  std::string raw_;
};

/// Sends one request line and returns one response line (without the
/// trailing newline).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string exchange(const std::string& request_line) = 0;
  virtual std::string describe() const = 0;
};

/// Endpoints:
///   stdio:<command> [args...]   spawn a child process, talk over its stdin/stdout
///   tcp:<host>:<port>           connect to a listening bridge
/// Spawning a child ignores SIGPIPE for the whole process.
std::unique_ptr<Transport> open_transport(std::string_view endpoint,
                                          std::chrono::milliseconds timeout);

struct BridgeOptions {
  std::chrono::milliseconds timeout{30000};
  /// Largest number of images per request; batches are chunked to fit.
  int max_batch = 32;
};

/// ScoreModel served by a remote bridge over the JSON-lines protocol (see
/// docs/bridge_protocol.md). Construction performs the handshake. Requests on
/// one connection are serialized.
class BridgeModel final : public ScoreModel {
 public:
  BridgeModel(std::unique_ptr<Transport> transport, BridgeOptions opts = {});

  InputShape input_shape() const override { return shape_; }
  int num_classes() const override { return classes_; }
  std::string describe() const;

 protected:
  double do_score(const Grid& image, int class_id) const override;
  Grid do_input_gradient(const Grid& image, int class_id) const override;
  std::vector<double> do_scores(std::span<const Grid> images, int class_id) const override;
  std::vector<Grid> do_input_gradients(std::span<const Grid> images, int class_id) const override;

 private:
  /// Sends one request line under the connection lock; returns the raw reply.
  std::string roundtrip(const std::string& request_line) const;
  long long take_id() const;

  mutable std::mutex mu_;
  std::unique_ptr<Transport> transport_;
  mutable long long next_id_ = 1;
  BridgeOptions opts_;
  InputShape shape_;
  int classes_ = 0;
};

std::unique_ptr<BridgeModel> bridge_client(std::string_view endpoint, BridgeOptions opts = {});
std::unique_ptr<BridgeModel> bridge_client(std::unique_ptr<Transport> transport,
                                           BridgeOptions opts = {});

/// Serves a ScoreModel over the JSON-lines protocol. handle() never throws:
/// malformed input and model failures become ok:false responses.
class BridgeServer {
 public:
  explicit BridgeServer(std::shared_ptr<const ScoreModel> model);

  std::string handle(std::string_view line) const;

  /// Answers one request per input line until end of input.
  void serve(std::istream& in, std::ostream& out) const;

 private:
  std::shared_ptr<const ScoreModel> model_;
};

/// Blocking TCP listener for a BridgeServer. Port 0 picks a free port.
class TcpBridgeListener {
 public:
  explicit TcpBridgeListener(int port, std::string_view host = "127.0.0.1");
  ~TcpBridgeListener();
  TcpBridgeListener(const TcpBridgeListener&) = delete;
  TcpBridgeListener& operator=(const TcpBridgeListener&) = delete;

  int port() const { return port_; }

  /// Accepts one client and serves it until it disconnects.
  void serve_one(const BridgeServer& server) const;

 private:
  int fd_ = -1;
  int port_ = 0;
};

/// In-process transport that hands each line to a callback; used for
/// loopback testing without sockets or child processes.
class CallbackTransport final : public Transport {
 public:
  using Handler = std::function<std::string(const std::string&)>;
  explicit CallbackTransport(Handler handler, std::string name = "callback")
      : handler_(std::move(handler)), name_(std::move(name)) {}
  std::string exchange(const std::string& request_line) override { return handler_(request_line); }
  std::string describe() const override { return name_; }

 private:
  Handler handler_;
  std::string name_;
};

}  // namespace maskforge
