#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "obscbf/filter.hpp"
#include "obscbf/harness.hpp"
#include "obscbf/world.hpp"

namespace obscbf::teleop {

inline constexpr int kProtocolVersion = 1;

struct TeleopConfig {
  std::string host = "127.0.0.1";
  /// 0 picks an ephemeral port.
  int port = 8765;
  /// Filter cycle period; physics runs at base_dt inside it.
  double tick_period = 0.05;
  double base_dt = 0.01;
  int physics_every = 2;
  int levelset_every = 5;
  int levelset_cells = 40;
  double levelset_extent = 4.0;
  double heartbeat_period = 1.0;
  double noise_sigma = 0.0;
  int n_rays = kDefaultRays;
  std::optional<Eigen::Vector2d> spawn;
  FilterConfig filter;

  nlohmann::json to_json() const;
  static TeleopConfig from_json(const nlohmann::json& j);
};

/// Latest-wins single-slot mailbox between the network reader and the loop.
class Mailbox {
 public:
  void post(const ControlInput& u);
  /// Most recent input posted since the last take, if any.
  std::optional<ControlInput> take();

 private:
  std::mutex mu_;
  std::optional<ControlInput> slot_;
};

/// Parses a client message. Returns the reference input for a well-formed
/// "reference" message and throws std::invalid_argument otherwise.
ControlInput parse_reference(const std::string& text);

/// Simulator + filter loop without networking. One tick = one filter cycle.
class Session {
 public:
  Session(Environment env, std::shared_ptr<const BarrierModel> model, TeleopConfig cfg, std::uint64_t seed = 0);

  /// Runs one filter cycle with the given reference (held from the previous
  /// tick when absent; zero initially) and returns the frame.
  nlohmann::json tick(const std::optional<ControlInput>& reference);

  std::uint64_t ticks() const { return tick_; }
  const State& state() const { return x_; }
  bool collided() const { return collided_; }
  const Environment& environment() const { return env_; }
  const TeleopConfig& config() const { return cfg_; }

 private:
  Environment env_;
  std::shared_ptr<const BarrierModel> model_;
  TeleopConfig cfg_;
  SafetyFilter filter_;
  Rng rng_;
  State x_;
  ControlInput u_ref_ = ControlInput::Zero();
  std::uint64_t tick_ = 0;
  bool collided_ = false;
};

/// WebSocket endpoint driving a Session at the configured tick rate. Accepts
/// one client at a time; further connections receive a busy status and are
/// closed. The loop runs only while a client is connected.
class Server {
 public:
  Server(std::shared_ptr<Session> session, TeleopConfig cfg);
  ~Server();

  /// Binds and starts the I/O thread. Returns the bound port.
  int start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace obscbf::teleop
