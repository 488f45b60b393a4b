#include <gtest/gtest.h>

#include <thread>

#include "json.hpp"
#include "maskforge/bridge.hpp"
#include "maskforge/integrated_gradients.hpp"
#include "maskforge/reference_models.hpp"
#include "oracles.hpp"

namespace maskforge {
namespace {

using nlohmann::json;
using testing::random_grid;

std::shared_ptr<LinearSoftmaxModel> linear_model() {
  return std::make_shared<LinearSoftmaxModel>(LinearSoftmaxModel::random({8, 8, 1}, 3, 0.25, 1));
}

std::unique_ptr<BridgeModel> loopback(std::shared_ptr<const ScoreModel> model) {
  auto server = std::make_shared<BridgeServer>(std::move(model));
  return bridge_client(std::make_unique<CallbackTransport>([server](const std::string& l) { return server->handle(l); }));
}

// Answers the handshake with fixed metadata and every other request with
// `result`.
CallbackTransport::Handler scripted(json handshake, json result) {
  return [handshake, result](const std::string& line) {
    const json req = json::parse(line);
    const json body = req["op"] == "handshake" ? handshake : result;
    return json{{"id", req["id"]}, {"ok", true}, {"result", body}}.dump();
  };
}

const json kSmallHandshake{{"h", 2}, {"w", 2}, {"channels", 1}, {"classes", 2}, {"score_kind", "probability"}};

TEST(Bridge, HandshakeMetadataPassesThrough) {
  const json hs{{"h", 224}, {"w", 224}, {"channels", 3}, {"classes", 1000}, {"score_kind", "probability"}};
  const auto model = bridge_client(std::make_unique<CallbackTransport>(scripted(hs, json::object())));
  EXPECT_EQ(model->input_shape(), (InputShape{224, 224, 3}));
  EXPECT_EQ(model->num_classes(), 1000);
}

TEST(Bridge, LoopbackMatchesLocalModel) {
  const auto local = linear_model();
  const auto remote = loopback(local);
  const Grid image = random_grid(8, 8, 1, 2);
  EXPECT_EQ(remote->input_shape(), local->input_shape());
  EXPECT_NEAR(remote->score(image, 1), local->score(image, 1), 1e-15);
  EXPECT_LT(max_abs_diff(remote->input_gradient(image, 2), local->input_gradient(image, 2)), 1e-15);
}

TEST(Bridge, BatchedGradientsKeepRequestOrder) {
  const auto local = linear_model();
  const auto remote = loopback(local);
  const Grid image = random_grid(8, 8, 1, 3);
  std::vector<Grid> path;
  for (int s = 1; s <= 20; ++s) path.push_back(image * (s / 20.0));
  const auto grads = remote->input_gradients(path, 0);
  ASSERT_EQ(grads.size(), 20u);
  for (std::size_t i = 0; i < path.size(); ++i) {
    EXPECT_LT(max_abs_diff(grads[i], local->input_gradient(path[i], 0)), 1e-15) << i;
  }
}

TEST(Bridge, IntegratedGradientsThroughTheWire) {
  const auto local = linear_model();
  const auto remote = loopback(local);
  const Grid image = random_grid(8, 8, 1, 4);
  const Grid baseline = random_grid(8, 8, 1, 5);
  IGConfig cfg;
  cfg.noise_sigma = 0.0;
  const Grid mask(4, 4, 1, 0.6);
  EXPECT_LT(max_abs_diff(ig_deletion(*remote, image, baseline, mask, 0, cfg),
                         ig_deletion(*local, image, baseline, mask, 0, cfg)),
            1e-14);
}

TEST(Bridge, ScoreOutsideUnitIntervalIsProtocolViolation) {
  const auto model = bridge_client(
      std::make_unique<CallbackTransport>(scripted(kSmallHandshake, {{"scores", {1.2}}})));
  try {
    model->score(Grid(2, 2), 0);
    FAIL();
  } catch (const BridgeError& e) {
    EXPECT_NE(std::string(e.what()).find("[0, 1]"), std::string::npos);
    EXPECT_NE(e.raw_response().find("1.2"), std::string::npos);
  }
}

TEST(Bridge, WrongGradientLengthIsRejected) {
  const auto model = bridge_client(
      std::make_unique<CallbackTransport>(scripted(kSmallHandshake, {{"gradient", {0.1, 0.2, 0.3}}})));
  EXPECT_THROW(model->input_gradient(Grid(2, 2), 0), BridgeError);
}

TEST(Bridge, NonProbabilityScoresRefused) {
  json hs = kSmallHandshake;
  hs["score_kind"] = "logit";
  EXPECT_THROW(bridge_client(std::make_unique<CallbackTransport>(scripted(hs, {}))), BridgeError);
}

TEST(Bridge, ServerErrorSurfacesMessage) {
  const auto handler = [](const std::string& line) {
    const json req = json::parse(line);
    if (req["op"] == "handshake") return json{{"id", req["id"]}, {"ok", true}, {"result", kSmallHandshake}}.dump();
    return json{{"id", req["id"]}, {"ok", false}, {"error", "CUDA out of memory"}}.dump();
  };
  const auto model = bridge_client(std::make_unique<CallbackTransport>(handler));
  try {
    model->score(Grid(2, 2), 0);
    FAIL();
  } catch (const BridgeError& e) {
    EXPECT_NE(std::string(e.what()).find("CUDA out of memory"), std::string::npos);
  }
}

TEST(Bridge, ChunksBatchesToServerLimit) {
  json hs = kSmallHandshake;
  hs["max_batch"] = 3;
  int score_requests = 0;
  const auto handler = [&](const std::string& line) {
    const json req = json::parse(line);
    if (req["op"] == "handshake") return json{{"id", req["id"]}, {"ok", true}, {"result", hs}}.dump();
    ++score_requests;
    EXPECT_LE(req["images"].size(), 3u);
    return json{{"id", req["id"]}, {"ok", true}, {"result", {{"scores", std::vector<double>(req["images"].size(), 0.5)}}}}
        .dump();
  };
  const auto model = bridge_client(std::make_unique<CallbackTransport>(handler));
  const std::vector<Grid> images(7, Grid(2, 2));
  EXPECT_EQ(model->scores(images, 0).size(), 7u);
  EXPECT_EQ(score_requests, 3);
}

TEST(BridgeServer, MalformedRequestsBecomeErrors) {
  const BridgeServer server(linear_model());
  for (const char* line : {"{", "[]", R"({"id": 1})", R"({"id": 2, "op": "dance"})",
                           R"({"id": 3, "op": "score", "class_id": 0, "images": [[1, 2]]})",
                           R"({"id": 4, "op": "score", "class_id": 9, "images": []})"}) {
    const json reply = json::parse(server.handle(line));
    EXPECT_FALSE(reply["ok"].get<bool>()) << line;
    EXPECT_TRUE(reply["error"].is_string());
  }
}

TEST(BridgeServer, ServesStreams) {
  const BridgeServer server(linear_model());
  std::istringstream in(R"({"id": 1, "op": "handshake"})" "\n" R"({"id": 2, "op": "nope"})" "\n");
  std::ostringstream out;
  server.serve(in, out);
  std::istringstream lines(out.str());
  std::string first;
  std::string second;
  std::getline(lines, first);
  std::getline(lines, second);
  EXPECT_EQ(json::parse(first)["result"]["classes"], 3);
  EXPECT_EQ(json::parse(second)["ok"], false);
}

TEST(Transport, RejectsUnknownEndpoint) {
  EXPECT_THROW(open_transport("http://localhost", std::chrono::milliseconds(100)), BridgeError);
  EXPECT_THROW(open_transport("tcp:localhost", std::chrono::milliseconds(100)), BridgeError);
}

TEST(Transport, UnreachableTcpEndpoint) {
  // Bind then close a listener to find a port with nobody behind it.
  int port = 0;
  { port = TcpBridgeListener(0).port(); }
  EXPECT_THROW(bridge_client("tcp:127.0.0.1:" + std::to_string(port)), BridgeError);
}

TEST(Transport, TcpLoopback) {
  const auto local = linear_model();
  const BridgeServer server(local);
  const TcpBridgeListener listener(0);
  std::thread serving([&] { listener.serve_one(server); });
  {
    const auto remote = bridge_client("tcp:127.0.0.1:" + std::to_string(listener.port()));
    const Grid image = random_grid(8, 8, 1, 6);
    EXPECT_NEAR(remote->score(image, 0), local->score(image, 0), 1e-15);
    EXPECT_LT(check_gradient(*remote, image, 0, 1e-3, 8), 1e-2);
  }
  serving.join();
}

std::string fake(const std::string& mode) { return std::string("stdio:") + FAKE_BRIDGE_PATH + " " + mode; }

TEST(StdioTransport, HealthyChild) {
  const auto remote = bridge_client(fake("ok"));
  const auto local = linear_model();
  const Grid image = random_grid(8, 8, 1, 7);
  EXPECT_NEAR(remote->score(image, 2), local->score(image, 2), 1e-15);
}

TEST(StdioTransport, ServeSubcommandChild) {
  if (std::string(MASKFORGE_CLI_PATH).empty()) GTEST_SKIP() << "command-line tool not built";
  const auto remote = bridge_client(std::string("stdio:") + MASKFORGE_CLI_PATH +
                                    " serve --model builtin:linear:4 --shape 6x6x3");
  EXPECT_EQ(remote->input_shape(), (InputShape{6, 6, 3}));
  EXPECT_LT(check_gradient(*remote, random_grid(6, 6, 3, 8), 1, 1e-4, 16), 1e-6);
}

TEST(StdioTransport, FaultsBecomeBridgeErrors) {
  const Grid image(8, 8);
  for (const char* mode : {"bad-score", "garbage", "wrong-id", "exit-after-handshake"}) {
    const auto remote = bridge_client(fake(mode));
    EXPECT_THROW(remote->score(image, 0), BridgeError) << mode;
  }
  EXPECT_THROW(bridge_client(fake("bad-grad"))->input_gradient(image, 0), BridgeError);
}

TEST(StdioTransport, TimesOut) {
  BridgeOptions opts;
  opts.timeout = std::chrono::milliseconds(300);
  const auto remote = bridge_client(fake("silent"), opts);
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(remote->score(Grid(8, 8), 0), BridgeError);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST(StdioTransport, MissingExecutable) {
  EXPECT_THROW(bridge_client("stdio:/nonexistent/bridge-binary"), BridgeError);
}

}  // namespace
}  // namespace maskforge
