#include "maskforge/bridge.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>
#include <vector>

#include "json.hpp"

namespace maskforge {
namespace {

using nlohmann::json;

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Line-oriented reader/writer over a pair of file descriptors.
class LineChannel {
 public:
  LineChannel(int read_fd, int write_fd, std::chrono::milliseconds timeout)
      : read_fd_(read_fd), write_fd_(write_fd), timeout_(timeout) {}

  void write_line(const std::string& line) {
    std::string data = line;
    data.push_back('\n');
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = write_fd_ == read_fd_
                            ? ::send(write_fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL)
                            : ::write(write_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw BridgeError(errno_text("bridge write failed"));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw BridgeError("bridge timed out waiting for a response", buffer_);
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw BridgeError(errno_text("bridge poll failed"));
      }
      if (ready == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw BridgeError(errno_text("bridge read failed"), buffer_);
      }
      if (n == 0) throw BridgeError("bridge closed the connection", buffer_);
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int read_fd_;
  int write_fd_;
  std::chrono::milliseconds timeout_;
  std::string buffer_;
};

class ProcessTransport final : public Transport {
 public:
  ProcessTransport(const std::string& command, std::chrono::milliseconds timeout) : command_(command) {
    std::istringstream words(command);
    std::vector<std::string> args;
    for (std::string w; words >> w;) args.push_back(w);
    if (args.empty()) throw BridgeError("stdio endpoint has no command");

    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw BridgeError(errno_text("pipe"));
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw BridgeError(errno_text("pipe"));
    }
    pid_ = ::fork();
    if (pid_ < 0) throw BridgeError(errno_text("fork"));
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
    channel_ = std::make_unique<LineChannel>(read_fd_, write_fd_, timeout);
  }

  ~ProcessTransport() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      // Closing stdin asks the child to exit; escalate if it lingers.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  std::string exchange(const std::string& request_line) override {
    try {
      channel_->write_line(request_line);
      return channel_->read_line();
    } catch (const BridgeError& e) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        std::string why = WIFEXITED(status) ? "exited with status " + std::to_string(WEXITSTATUS(status))
                                            : "was terminated by a signal";
        throw BridgeError(std::string(e.what()) + " (process '" + command_ + "' " + why + ")",
                          e.raw_response());
      }
      throw;
    }
  }

  std::string describe() const override { return "stdio:" + command_; }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::unique_ptr<LineChannel> channel_;
};

class TcpTransport final : public Transport {
 public:
  TcpTransport(const std::string& host, const std::string& port, std::chrono::milliseconds timeout)
      : name_("tcp:" + host + ":" + port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &found); rc != 0) {
      throw BridgeError("cannot resolve " + name_ + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no addresses";
    for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        fd_ = fd;
        break;
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    ::freeaddrinfo(found);
    if (fd_ < 0) throw BridgeError("cannot connect to " + name_ + ": " + last_error);
    channel_ = std::make_unique<LineChannel>(fd_, fd_, timeout);
  }

  ~TcpTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

  std::string exchange(const std::string& request_line) override {
    channel_->write_line(request_line);
    return channel_->read_line();
  }

  std::string describe() const override { return name_; }

 private:
  std::string name_;
  int fd_ = -1;
  std::unique_ptr<LineChannel> channel_;
};

json encode_images(std::span<const Grid> images) {
  json arr = json::array();
  for (const Grid& g : images) arr.push_back(std::vector<double>(g.values().begin(), g.values().end()));
  return arr;
}

// Parses a response, checks id and ok, and returns the "result" member.
json unwrap(const std::string& raw, long long id) {
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::parse_error&) {
    throw BridgeError("bridge protocol violation: response is not JSON", raw);
  }
  if (!j.is_object() || !j.contains("id") || !j.contains("ok")) {
    throw BridgeError("bridge protocol violation: response lacks id/ok", raw);
  }
  if (!j["id"].is_number_integer() || j["id"].get<long long>() != id) {
    throw BridgeError("bridge protocol violation: response id does not match request " +
                          std::to_string(id),
                      raw);
  }
  if (!j["ok"].is_boolean()) throw BridgeError("bridge protocol violation: ok is not a boolean", raw);
  if (!j["ok"].get<bool>()) {
    const std::string err = j.contains("error") && j["error"].is_string() ? j["error"].get<std::string>()
                                                                          : "unspecified error";
    throw BridgeError("bridge reported an error: " + err, raw);
  }
  if (!j.contains("result")) throw BridgeError("bridge protocol violation: missing result", raw);
  return j["result"];
}

std::vector<double> number_array(const json& j, const char* what, const std::string& raw) {
  if (!j.is_array()) throw BridgeError(std::string("bridge protocol violation: ") + what + " is not an array", raw);
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number()) throw BridgeError(std::string("bridge protocol violation: ") + what + " holds a non-number", raw);
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw BridgeError(std::string("bridge protocol violation: non-finite ") + what, raw);
    out.push_back(d);
  }
  return out;
}

int positive_int(const json& j, const char* key, const std::string& raw) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() <= 0) {
    throw BridgeError(std::string("bridge handshake lacks a positive integer '") + key + "'", raw);
  }
  return j[key].get<int>();
}

json ok_response(const json& id, json result) { return json{{"id", id}, {"ok", true}, {"result", std::move(result)}}; }

json error_response(const json& id, const std::string& message) {
  return json{{"id", id}, {"ok", false}, {"error", message}};
}

}  // namespace

std::unique_ptr<Transport> open_transport(std::string_view endpoint, std::chrono::milliseconds timeout) {
  if (endpoint.starts_with("stdio:")) {
    return std::make_unique<ProcessTransport>(std::string(endpoint.substr(6)), timeout);
  }
  if (endpoint.starts_with("tcp:")) {
    const std::string rest(endpoint.substr(4));
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
      throw BridgeError("tcp endpoint must look like tcp:<host>:<port>");
    }
    return std::make_unique<TcpTransport>(rest.substr(0, colon), rest.substr(colon + 1), timeout);
  }
  throw BridgeError("unknown bridge endpoint '" + std::string(endpoint) +
                    "' (expected stdio:<command> or tcp:<host>:<port>)");
}

BridgeModel::BridgeModel(std::unique_ptr<Transport> transport, BridgeOptions opts)
    : transport_(std::move(transport)), opts_(opts) {
  if (!transport_) throw BridgeError("bridge transport is null");
  if (opts_.max_batch < 1) opts_.max_batch = 1;
  const long long id = take_id();
  const std::string raw = roundtrip(json{{"id", id}, {"op", "handshake"}}.dump());
  const json r = unwrap(raw, id);
  if (!r.is_object()) throw BridgeError("bridge handshake result is not an object", raw);
  shape_ = {positive_int(r, "h", raw), positive_int(r, "w", raw), positive_int(r, "channels", raw)};
  classes_ = positive_int(r, "classes", raw);
  if (r.contains("score_kind") && r["score_kind"] != "probability") {
    throw BridgeError("bridge serves score_kind " + r["score_kind"].dump() +
                          "; only probability scores satisfy the model contract",
                      raw);
  }
  if (r.contains("max_batch") && r["max_batch"].is_number_integer() && r["max_batch"].get<int>() > 0) {
    opts_.max_batch = std::min(opts_.max_batch, r["max_batch"].get<int>());
  }
}

std::string BridgeModel::describe() const { return transport_->describe(); }

long long BridgeModel::take_id() const {
  std::lock_guard lock(mu_);
  return next_id_++;
}

std::string BridgeModel::roundtrip(const std::string& request_line) const {
  std::lock_guard lock(mu_);
  return transport_->exchange(request_line);
}

double BridgeModel::do_score(const Grid& image, int class_id) const {
  return do_scores(std::span<const Grid>(&image, 1), class_id).front();
}

Grid BridgeModel::do_input_gradient(const Grid& image, int class_id) const {
  const long long id = take_id();
  const std::string raw = roundtrip(json{{"id", id},
                                         {"op", "grad"},
                                         {"class_id", class_id},
                                         {"score_kind", "probability"},
                                         {"images", encode_images(std::span<const Grid>(&image, 1))}}
                                        .dump());
  const json r = unwrap(raw, id);
  if (!r.is_object() || !r.contains("gradient")) throw BridgeError("bridge grad result lacks 'gradient'", raw);
  auto values = number_array(r["gradient"], "gradient", raw);
  if (values.size() != image.size()) {
    throw BridgeError("bridge returned a gradient of " + std::to_string(values.size()) +
                          " values for an image of " + std::to_string(image.size()),
                      raw);
  }
  return Grid(image.height(), image.width(), image.channels(), std::move(values));
}

std::vector<double> BridgeModel::do_scores(std::span<const Grid> images, int class_id) const {
  std::vector<double> out;
  out.reserve(images.size());
  for (std::size_t off = 0; off < images.size(); off += static_cast<std::size_t>(opts_.max_batch)) {
    const auto chunk = images.subspan(off, std::min(images.size() - off, static_cast<std::size_t>(opts_.max_batch)));
    const long long id = take_id();
    const std::string raw = roundtrip(json{{"id", id},
                                           {"op", "score"},
                                           {"class_id", class_id},
                                           {"score_kind", "probability"},
                                           {"images", encode_images(chunk)}}
                                          .dump());
    const json r = unwrap(raw, id);
    if (!r.is_object() || !r.contains("scores")) throw BridgeError("bridge score result lacks 'scores'", raw);
    const auto scores = number_array(r["scores"], "scores", raw);
    if (scores.size() != chunk.size()) {
      throw BridgeError("bridge returned " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(chunk.size()) + " images",
                        raw);
    }
    for (double s : scores) {
      if (s < 0.0 || s > 1.0) {
        throw BridgeError("bridge protocol violation: score " + std::to_string(s) + " outside [0, 1]", raw);
      }
      out.push_back(s);
    }
  }
  return out;
}

std::vector<Grid> BridgeModel::do_input_gradients(std::span<const Grid> images, int class_id) const {
  std::vector<Grid> out;
  out.reserve(images.size());
  for (std::size_t off = 0; off < images.size(); off += static_cast<std::size_t>(opts_.max_batch)) {
    const auto chunk = images.subspan(off, std::min(images.size() - off, static_cast<std::size_t>(opts_.max_batch)));
    const long long id = take_id();
    const std::string raw = roundtrip(json{{"id", id},
                                           {"op", "batch_grad"},
                                           {"class_id", class_id},
                                           {"score_kind", "probability"},
                                           {"images", encode_images(chunk)}}
                                          .dump());
    const json r = unwrap(raw, id);
    if (!r.is_object() || !r.contains("gradients") || !r["gradients"].is_array()) {
      throw BridgeError("bridge batch_grad result lacks 'gradients'", raw);
    }
    if (r["gradients"].size() != chunk.size()) {
      throw BridgeError("bridge returned " + std::to_string(r["gradients"].size()) + " gradients for " +
                            std::to_string(chunk.size()) + " images",
                        raw);
    }
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      auto values = number_array(r["gradients"][i], "gradient", raw);
      const Grid& img = chunk[i];
      if (values.size() != img.size()) {
        throw BridgeError("bridge returned a gradient of " + std::to_string(values.size()) +
                              " values for an image of " + std::to_string(img.size()),
                          raw);
      }
      out.emplace_back(img.height(), img.width(), img.channels(), std::move(values));
    }
  }
  return out;
}

std::unique_ptr<BridgeModel> bridge_client(std::string_view endpoint, BridgeOptions opts) {
  return std::make_unique<BridgeModel>(open_transport(endpoint, opts.timeout), opts);
}

std::unique_ptr<BridgeModel> bridge_client(std::unique_ptr<Transport> transport, BridgeOptions opts) {
  return std::make_unique<BridgeModel>(std::move(transport), opts);
}

BridgeServer::BridgeServer(std::shared_ptr<const ScoreModel> model) : model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("BridgeServer: null model");
}

std::string BridgeServer::handle(std::string_view line) const {
  json request;
  try {
    request = json::parse(line);
  } catch (const json::parse_error& e) {
    return error_response(nullptr, std::string("parse error: ") + e.what()).dump();
  }
  const json id = request.is_object() && request.contains("id") ? request["id"] : json(nullptr);
  try {
    if (!request.is_object() || !request.contains("op") || !request["op"].is_string()) {
      return error_response(id, "request must be an object with a string 'op'").dump();
    }
    const std::string op = request["op"].get<std::string>();
    const InputShape shape = model_->input_shape();
    if (op == "handshake") {
      return ok_response(id, {{"h", shape.height},
                              {"w", shape.width},
                              {"channels", shape.channels},
                              {"classes", model_->num_classes()},
                              {"score_kind", "probability"},
                              {"layout", "chw"}})
          .dump();
    }
    if (op != "score" && op != "grad" && op != "batch_grad") {
      return error_response(id, "unknown op '" + op + "'").dump();
    }
    if (request.contains("score_kind") && request["score_kind"] != "probability") {
      return error_response(id, "unsupported score_kind " + request["score_kind"].dump()).dump();
    }
    if (!request.contains("class_id") || !request["class_id"].is_number_integer()) {
      return error_response(id, "missing integer class_id").dump();
    }
    if (!request.contains("images") || !request["images"].is_array()) {
      return error_response(id, "missing images array").dump();
    }
    const int class_id = request["class_id"].get<int>();
    if (class_id < 0 || class_id >= model_->num_classes()) {
      return error_response(id, "class_id " + std::to_string(class_id) + " outside [0, " +
                                    std::to_string(model_->num_classes()) + ")")
          .dump();
    }
    std::vector<Grid> images;
    for (const auto& flat : request["images"]) {
      images.emplace_back(shape.height, shape.width, shape.channels, flat.get<std::vector<double>>());
    }
    if (op == "score") {
      return ok_response(id, {{"scores", model_->scores(images, class_id)}}).dump();
    }
    if (op == "grad") {
      if (images.size() != 1) return error_response(id, "grad takes exactly one image").dump();
      const Grid g = model_->input_gradient(images.front(), class_id);
      return ok_response(id, {{"gradient", std::vector<double>(g.values().begin(), g.values().end())}}).dump();
    }
    json grads = json::array();
    for (const Grid& g : model_->input_gradients(images, class_id)) {
      grads.push_back(std::vector<double>(g.values().begin(), g.values().end()));
    }
    return ok_response(id, {{"gradients", std::move(grads)}}).dump();
  } catch (const std::exception& e) {
    return error_response(id, e.what()).dump();
  }
}

void BridgeServer::serve(std::istream& in, std::ostream& out) const {
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    out << handle(line) << '\n';
    out.flush();
  }
}

TcpBridgeListener::TcpBridgeListener(int port, std::string_view host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw BridgeError(errno_text("socket"));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, std::string(host).c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw BridgeError("invalid listen address '" + std::string(host) + "'");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 4) != 0) {
    const std::string msg = errno_text("bind/listen");
    ::close(fd_);
    throw BridgeError(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpBridgeListener::~TcpBridgeListener() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpBridgeListener::serve_one(const BridgeServer& server) const {
  const int client = ::accept(fd_, nullptr, nullptr);
  if (client < 0) throw BridgeError(errno_text("accept"));
  LineChannel channel(client, client, std::chrono::hours(24));
  try {
    for (;;) {
      const std::string line = channel.read_line();
      if (line.empty()) continue;
      channel.write_line(server.handle(line));
    }
  } catch (const BridgeError&) {
    // Client went away.
  }
  ::close(client);
}

}  // namespace maskforge
