#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "obscbf/teleop.hpp"

using namespace obscbf;
using namespace obscbf::teleop;

namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = asio::ip::tcp;
using Clock = std::chrono::steady_clock;

Environment pillar_scene() {
  Environment env;
  env.extent = {12.0, 6.0};
  env.pillars.push_back({{5.0, 3.0}, 0.8});
  return env;
}

std::shared_ptr<const BarrierModel> stub_model() { return std::make_shared<RangeBarrier>(1.0, 0.5); }

TeleopConfig fast_config() {
  TeleopConfig c;
  c.n_rays = 128;
  c.port = 0;
  return c;
}

std::string reference(double ax, double ay) {
  return nlohmann::json{{"type", "reference"}, {"proto", 1}, {"ax", ax}, {"ay", ay}, {"t", 0.0}}.dump();
}

// Minimal synchronous client.
struct Client {
  asio::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};

  explicit Client(int port) {
    tcp::resolver resolver(ioc);
    asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
  }

  nlohmann::json read() {
    beast::flat_buffer buf;
    ws.read(buf);
    return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
  }

  /// Next message of the given type, skipping others.
  nlohmann::json read_type(const std::string& type) {
    for (;;) {
      auto j = read();
      if (j["type"] == type) return j;
    }
  }

  void send(const std::string& text) {
    ws.text(true);
    ws.write(asio::buffer(text));
  }
};

}  // namespace

TEST(ParseReference, AcceptsWellFormed) {
  const ControlInput u = parse_reference(reference(1.5, -0.5));
  EXPECT_EQ(u, ControlInput(1.5, -0.5));
}

TEST(ParseReference, RejectsMalformed) {
  EXPECT_THROW(parse_reference("not json"), std::invalid_argument);
  EXPECT_THROW(parse_reference("[1, 2]"), std::invalid_argument);
  EXPECT_THROW(parse_reference(R"({"type":"reference","proto":2,"ax":1,"ay":0})"), std::invalid_argument);
  EXPECT_THROW(parse_reference(R"({"type":"joystick","proto":1,"ax":1,"ay":0})"), std::invalid_argument);
  EXPECT_THROW(parse_reference(R"({"type":"reference","proto":1,"ax":"1","ay":0})"), std::invalid_argument);
  EXPECT_THROW(parse_reference(R"({"type":"reference","proto":1,"ax":1})"), std::invalid_argument);
}

TEST(Mailbox, LatestWins) {
  Mailbox m;
  EXPECT_FALSE(m.take().has_value());
  m.post({1, 0});
  m.post({0, 1});
  m.post({2, 2});
  EXPECT_EQ(*m.take(), ControlInput(2, 2));
  EXPECT_FALSE(m.take().has_value());
}

TEST(TeleopConfig, JsonRoundTripAndValidation) {
  TeleopConfig c;
  c.port = 9000;
  c.spawn = Eigen::Vector2d(1.0, 2.0);
  EXPECT_EQ(TeleopConfig::from_json(c.to_json()).to_json(), c.to_json());
  auto bad = c.to_json();
  bad["tick_period"] = 0.055;
  EXPECT_THROW(TeleopConfig::from_json(bad), std::invalid_argument);
  bad = c.to_json();
  bad["port"] = 70000;
  EXPECT_THROW(TeleopConfig::from_json(bad), std::invalid_argument);
}

TEST(Session, NoInputStaysAtRest) {
  Session s(pillar_scene(), stub_model(), fast_config());
  const State x0 = s.state();
  for (int k = 0; k < 40; ++k) {
    const auto f = s.tick(std::nullopt);
    EXPECT_EQ(f["tick"], k);
    EXPECT_EQ(f["u_ref"], nlohmann::json({0.0, 0.0}));
    EXPECT_EQ(f["observation"].size(), 32u);
  }
  EXPECT_EQ(s.state().p, x0.p);
  EXPECT_EQ(s.state().v, Eigen::Vector2d::Zero());
}

TEST(Session, ReferenceClampedAndHeld) {
  Session s(pillar_scene(), stub_model(), fast_config());
  auto f = s.tick(ControlInput(0.0, 30.0));
  EXPECT_NEAR(f["u_ref"][1].get<double>(), 2.0, 1e-12);
  f = s.tick(std::nullopt);
  EXPECT_NEAR(f["u_ref"][1].get<double>(), 2.0, 1e-12);
  for (int k = 0; k < 20; ++k) {
    f = s.tick(std::nullopt);
    const Eigen::Vector2d u(f["u_star"][0].get<double>(), f["u_star"][1].get<double>());
    EXPECT_LE(u.norm(), 2.0 + 1e-12);
  }
}

TEST(Session, LevelSetEveryFifthTick) {
  TeleopConfig cfg = fast_config();
  Session s(pillar_scene(), stub_model(), cfg);
  for (int k = 0; k < 12; ++k) {
    const auto f = s.tick(std::nullopt);
    EXPECT_EQ(f.contains("levelset"), k % 5 == 0) << k;
    if (f.contains("levelset")) {
      EXPECT_EQ(f["levelset"]["nx"], 40);
      EXPECT_EQ(f["levelset"]["values"].size(), 1600u);
    }
  }
}

TEST(Session, AdversarialRammingNeverCollides) {
  // 60 s of input aimed at the pillar center, re-aimed every tick.
  Session s(pillar_scene(), stub_model(), fast_config());
  const Eigen::Vector2d target(5.0, 3.0);
  int intervened = 0;
  for (int k = 0; k < 1200; ++k) {
    const Eigen::Vector2d dir = (target - s.state().p).normalized();
    const auto f = s.tick(ControlInput(2.0 * dir));
    ASSERT_FALSE(f["collision"].get<bool>()) << "tick " << k;
    if (f["intervened"].get<bool>()) ++intervened;
  }
  EXPECT_FALSE(s.collided());
  EXPECT_GT(intervened, 600);
  EXPECT_GT(Environment(pillar_scene()).clearance(s.state().p), 0.26);
}

TEST(Server, StreamsFramesAtTickRate) {
  auto session = std::make_shared<Session>(pillar_scene(), stub_model(), fast_config());
  Server server(session, fast_config());
  const int port = server.start();
  Client c(port);
  const auto hello = c.read();
  EXPECT_EQ(hello["type"], "hello");
  EXPECT_EQ(hello["proto"], 1);
  EXPECT_EQ(hello["scene"]["pillars"].size(), 1u);

  std::vector<double> times;
  std::vector<long> ticks;
  int heartbeats = 0;
  const auto t0 = Clock::now();
  while (Clock::now() - t0 < std::chrono::milliseconds(3000)) {
    const auto m = c.read();
    if (m["type"] == "frame") {
      times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
      ticks.push_back(m["tick"].get<long>());
    } else if (m["type"] == "heartbeat") {
      ++heartbeats;
    }
  }
  ASSERT_GT(times.size(), 20u);
  for (std::size_t i = 1; i < ticks.size(); ++i) EXPECT_EQ(ticks[i], ticks[i - 1] + 1);
  const double rate = (times.size() - 1) / (times.back() - times.front());
  EXPECT_NEAR(rate, 20.0, 2.0);
  EXPECT_GE(heartbeats, 2);
  server.stop();
}

TEST(Server, SecondClientGetsBusy) {
  auto session = std::make_shared<Session>(pillar_scene(), stub_model(), fast_config());
  Server server(session, fast_config());
  const int port = server.start();
  Client first(port);
  EXPECT_EQ(first.read()["type"], "hello");
  Client second(port);
  const auto m = second.read();
  EXPECT_EQ(m["type"], "status");
  EXPECT_EQ(m["status"], "busy");
  beast::flat_buffer buf;
  beast::error_code ec;
  second.ws.read(buf, ec);
  EXPECT_EQ(ec, websocket::error::closed);
  // The first client keeps streaming.
  EXPECT_EQ(first.read_type("frame")["type"], "frame");
  server.stop();
}

TEST(Server, MalformedMessageWarnsAndReferenceApplies) {
  auto session = std::make_shared<Session>(pillar_scene(), stub_model(), fast_config());
  Server server(session, fast_config());
  const int port = server.start();
  Client c(port);
  c.read_type("hello");
  c.send("{broken");
  const auto w = c.read_type("warning");
  EXPECT_EQ(w["proto"], 1);
  c.send(reference(0.0, -1.0));
  for (int k = 0; k < 20; ++k) {
    const auto f = c.read_type("frame");
    if (f["u_ref"][1].get<double>() == -1.0) {
      server.stop();
      return;
    }
  }
  ADD_FAILURE() << "reference never applied";
  server.stop();
}

TEST(Server, PausesWithoutClient) {
  auto session = std::make_shared<Session>(pillar_scene(), stub_model(), fast_config());
  Server server(session, fast_config());
  const int port = server.start();
  {
    Client c(port);
    c.read_type("frame");
    c.ws.close(websocket::close_code::normal);
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(150));
  const auto paused_at = session->ticks();
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  EXPECT_EQ(session->ticks(), paused_at);
  Client again(port);
  EXPECT_EQ(again.read()["type"], "hello");
  EXPECT_GT(again.read_type("frame")["tick"].get<std::uint64_t>(), 0u);
  server.stop();
}
