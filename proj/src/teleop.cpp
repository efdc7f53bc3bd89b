#include "obscbf/teleop.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <stdexcept>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

namespace obscbf::teleop {
namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace ws = boost::beast::websocket;
using tcp = asio::ip::tcp;

nlohmann::json vec2(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }

nlohmann::json message(const std::string& type) { return {{"type", type}, {"proto", kProtocolVersion}}; }

}  // namespace

nlohmann::json TeleopConfig::to_json() const {
  nlohmann::json j = {{"host", host},
                      {"port", port},
                      {"tick_period", tick_period},
                      {"base_dt", base_dt},
                      {"physics_every", physics_every},
                      {"levelset_every", levelset_every},
                      {"levelset_cells", levelset_cells},
                      {"levelset_extent", levelset_extent},
                      {"heartbeat_period", heartbeat_period},
                      {"noise_sigma", noise_sigma},
                      {"n_rays", n_rays},
                      {"filter", filter.to_json()}};
  if (spawn) j["spawn"] = vec2(*spawn);
  return j;
}

TeleopConfig TeleopConfig::from_json(const nlohmann::json& j) {
  TeleopConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.tick_period = j.value("tick_period", c.tick_period);
  c.base_dt = j.value("base_dt", c.base_dt);
  c.physics_every = j.value("physics_every", c.physics_every);
  c.levelset_every = j.value("levelset_every", c.levelset_every);
  c.levelset_cells = j.value("levelset_cells", c.levelset_cells);
  c.levelset_extent = j.value("levelset_extent", c.levelset_extent);
  c.heartbeat_period = j.value("heartbeat_period", c.heartbeat_period);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.n_rays = j.value("n_rays", c.n_rays);
  if (j.contains("spawn")) c.spawn = Eigen::Vector2d(j["spawn"].at(0).get<double>(), j["spawn"].at(1).get<double>());
  if (j.contains("filter")) c.filter = FilterConfig::from_json(j["filter"]);
  const double substeps = c.tick_period / c.base_dt;
  if (c.port < 0 || c.port > 65535 || !(c.base_dt > 0.0) || !(c.tick_period > 0.0) ||
      std::abs(substeps - std::round(substeps)) > 1e-9 || c.physics_every < 1 || c.levelset_every < 1 ||
      c.levelset_cells < 2 || !(c.heartbeat_period > 0.0) || c.noise_sigma < 0.0 || c.n_rays < kObsBins ||
      c.n_rays % kObsBins != 0) {
    throw std::invalid_argument("TeleopConfig: invalid parameters");
  }
  return c;
}

void Mailbox::post(const ControlInput& u) {
  std::lock_guard lock(mu_);
  slot_ = u;
}

std::optional<ControlInput> Mailbox::take() {
  std::lock_guard lock(mu_);
  auto out = slot_;
  slot_.reset();
  return out;
}

ControlInput parse_reference(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw std::invalid_argument("message is not valid JSON");
  }
  if (!j.is_object()) throw std::invalid_argument("message is not an object");
  if (j.value("proto", -1) != kProtocolVersion) throw std::invalid_argument("unsupported protocol version");
  if (!j.contains("type") || j["type"] != "reference") throw std::invalid_argument("unknown message type");
  if (!j.contains("ax") || !j.contains("ay") || !j["ax"].is_number() || !j["ay"].is_number()) {
    throw std::invalid_argument("reference needs numeric ax and ay");
  }
  const ControlInput u(j["ax"].get<double>(), j["ay"].get<double>());
  if (!u.allFinite()) throw std::invalid_argument("reference is not finite");
  return u;
}

// ---------------------------------------------------------------------------

Session::Session(Environment env, std::shared_ptr<const BarrierModel> model, TeleopConfig cfg, std::uint64_t seed)
    : env_(std::move(env)), model_(std::move(model)), cfg_(std::move(cfg)), filter_(model_, cfg_.filter), rng_(seed) {
  x_ = State(cfg_.spawn.value_or(default_spawn(env_)), Eigen::Vector2d::Zero());
  if (env_.box_collides(x_.p, cfg_.filter.half_width)) throw std::invalid_argument("Session: spawn pose is in collision");
}

nlohmann::json Session::tick(const std::optional<ControlInput>& reference) {
  if (reference) u_ref_ = clamp_input(*reference, cfg_.filter.u_max);
  nlohmann::json frame = message("frame");
  frame["tick"] = tick_;
  frame["t"] = tick_ * cfg_.tick_period;
  frame["state"] = {{"p", vec2(x_.p)}, {"v", vec2(x_.v)}};
  frame["collision"] = collided_;
  if (collided_) {
    ++tick_;
    return frame;
  }

  const Observation o = bin_scan(raycast(env_, x_.p, cfg_.n_rays), cfg_.noise_sigma, rng_);
  const FilterOutput out = filter_.step(o, x_, u_ref_, cfg_.tick_period);
  const Certificate& cert = filter_.certificate();
  frame["observation"] = std::vector<double>(o.data(), o.data() + o.size());
  frame["u_ref"] = vec2(out.u_ref);
  frame["u_star"] = vec2(out.u_star);
  frame["delta"] = out.delta;
  frame["h"] = out.h;
  frame["intervened"] = out.intervened;
  frame["accepted"] = out.accepted;
  frame["fallback"] = out.fallback;
  frame["dead_reckoning"] = cert.dead_reckoning;
  frame["sustained_dead_reckoning"] = out.sustained_dead_reckoning;
  frame["age"] = out.age;
  // World position of the held certificate's origin.
  frame["certificate_origin"] = vec2(x_.p - cert.xi);

  if (cert.valid && tick_ % cfg_.levelset_every == 0) {
    GridSpec spec;
    spec.x_min = spec.y_min = -cfg_.levelset_extent;
    spec.x_max = spec.y_max = cfg_.levelset_extent;
    spec.nx = spec.ny = cfg_.levelset_cells;
    const LevelSetGrid g = export_levelset(*model_, cert.o_safe, x_.v, spec);
    frame["levelset"] = {{"nx", spec.nx},         {"ny", spec.ny},
                         {"x_min", spec.x_min},   {"x_max", spec.x_max},
                         {"y_min", spec.y_min},   {"y_max", spec.y_max},
                         {"origin", vec2(x_.p - cert.xi)}, {"values", g.values}};
  }

  const int substeps = static_cast<int>(std::lround(cfg_.tick_period / cfg_.base_dt));
  for (int k = 1; k <= substeps; ++k) {
    x_ = step(x_, out.u_star, cfg_.base_dt);
    if (k % cfg_.physics_every == 0 && env_.box_collides(x_.p, cfg_.filter.half_width)) {
      collided_ = true;
      break;
    }
  }
  ++tick_;
  return frame;
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  struct Client : std::enable_shared_from_this<Client> {
    Client(tcp::socket s, Impl* o) : stream(std::move(s)), owner(o) {}
    ws::stream<tcp::socket> stream;
    beast::flat_buffer buffer;
    std::deque<std::string> out;
    bool writing = false;
    bool close_after_write = false;
    bool closed = false;
    Impl* owner;

    void send(std::string text) {
      if (closed) return;
      out.push_back(std::move(text));
      if (!writing) write_next();
    }

    void write_next() {
      if (out.empty()) {
        writing = false;
        if (close_after_write && !closed) {
          closed = true;
          stream.async_close(ws::close_code::try_again_later, [self = shared_from_this()](beast::error_code) {});
        }
        return;
      }
      writing = true;
      stream.text(true);
      stream.async_write(asio::buffer(out.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->out.pop_front();
        if (ec) {
          self->fail();
          return;
        }
        self->write_next();
      });
    }

    void read_next() {
      stream.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->fail();
          return;
        }
        const std::string text = beast::buffers_to_string(self->buffer.data());
        self->buffer.consume(self->buffer.size());
        self->owner->on_message(*self, text);
        self->read_next();
      });
    }

    void fail() {
      if (closed && !owner->is_active(this)) return;
      closed = true;
      owner->on_disconnect(this);
    }
  };

  Impl(std::shared_ptr<Session> s, TeleopConfig c)
      : session(std::move(s)), cfg(std::move(c)), acceptor(ioc), tick_timer(ioc), heartbeat_timer(ioc) {}

  std::shared_ptr<Session> session;
  TeleopConfig cfg;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  asio::steady_timer tick_timer;
  asio::steady_timer heartbeat_timer;
  std::shared_ptr<Client> active;
  Mailbox mailbox;
  std::thread thread;

  bool is_active(const Client* c) const { return active.get() == c; }

  std::chrono::steady_clock::duration period(double seconds) const {
    return std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(seconds));
  }

  void do_accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto client = std::make_shared<Client>(std::move(socket), this);
      client->stream.async_accept([this, client](beast::error_code ec2) {
        if (ec2) return;
        on_connect(client);
      });
      do_accept();
    });
  }

  void on_connect(const std::shared_ptr<Client>& client) {
    if (active) {
      nlohmann::json busy = message("status");
      busy["status"] = "busy";
      busy["message"] = "another client is connected";
      client->close_after_write = true;
      client->send(busy.dump());
      return;
    }
    active = client;
    nlohmann::json hello = message("hello");
    hello["scene"] = scene_to_json(session->environment());
    hello["config"] = cfg.to_json();
    hello["tick"] = session->ticks();
    client->send(hello.dump());
    client->read_next();
    tick_timer.expires_after(period(cfg.tick_period));
    tick_timer.async_wait([this, client](beast::error_code ec) { on_tick(ec, client); });
    heartbeat_timer.expires_after(period(cfg.heartbeat_period));
    heartbeat_timer.async_wait([this, client](beast::error_code ec) { on_heartbeat(ec, client); });
  }

  void on_disconnect(Client* client) {
    if (!is_active(client)) return;
    // The loop pauses until the next client connects.
    active.reset();
    tick_timer.cancel();
    heartbeat_timer.cancel();
  }

  void on_message(Client& client, const std::string& text) {
    if (!is_active(&client)) return;
    try {
      mailbox.post(parse_reference(text));
    } catch (const std::invalid_argument& e) {
      nlohmann::json warn = message("warning");
      warn["message"] = std::string("ignored message: ") + e.what();
      client.send(warn.dump());
    }
  }

  void on_tick(beast::error_code ec, const std::shared_ptr<Client>& client) {
    if (ec || active != client) return;
    const bool was_collided = session->collided();
    if (!was_collided) {
      client->send(session->tick(mailbox.take()).dump());
      if (session->collided()) {
        nlohmann::json st = message("status");
        st["status"] = "collision";
        st["tick"] = session->ticks();
        client->send(st.dump());
      }
    }
    if (session->collided()) return;  // paused for good
    const auto next = tick_timer.expiry() + period(cfg.tick_period);
    // Resynchronize instead of bursting after a stall.
    tick_timer.expires_at(std::max(next, std::chrono::steady_clock::now()));
    tick_timer.async_wait([this, client](beast::error_code e) { on_tick(e, client); });
  }

  void on_heartbeat(beast::error_code ec, const std::shared_ptr<Client>& client) {
    if (ec || active != client) return;
    nlohmann::json hb = message("heartbeat");
    hb["tick"] = session->ticks();
    hb["paused"] = session->collided();
    client->send(hb.dump());
    heartbeat_timer.expires_at(heartbeat_timer.expiry() + period(cfg.heartbeat_period));
    heartbeat_timer.async_wait([this, client](beast::error_code e) { on_heartbeat(e, client); });
  }
};

Server::Server(std::shared_ptr<Session> session, TeleopConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(session), std::move(cfg))) {}

Server::~Server() { stop(); }

int Server::start() {
  Impl& s = *impl_;
  const tcp::endpoint ep(asio::ip::make_address(s.cfg.host), static_cast<unsigned short>(s.cfg.port));
  s.acceptor.open(ep.protocol());
  s.acceptor.set_option(asio::socket_base::reuse_address(true));
  s.acceptor.bind(ep);
  s.acceptor.listen();
  port_ = s.acceptor.local_endpoint().port();
  s.do_accept();
  s.thread = std::thread([&s] { s.ioc.run(); });
  return port_;
}

void Server::stop() {
  Impl& s = *impl_;
  if (s.thread.joinable()) {
    asio::post(s.ioc, [&s] {
      beast::error_code ec;
      s.acceptor.close(ec);
      s.tick_timer.cancel();
      s.heartbeat_timer.cancel();
      if (s.active) {
        s.active->stream.next_layer().close(ec);
        s.active.reset();
      }
      s.ioc.stop();
    });
    s.thread.join();
  }
}

}  // namespace obscbf::teleop
