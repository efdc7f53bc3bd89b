#include "obscbf/harness.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace obscbf {
namespace {

nlohmann::json vec2_json(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }

Eigen::Vector2d vec2_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument("expected a 2-vector");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

double box_clearance(const Environment& env, const Eigen::Vector2d& c, double hw) {
  if (env.box_collides(c, hw)) return 0.0;
  double lo = 0.0, hi = std::max(env.clearance(c), 1e-9);
  while (!env.box_collides(c, hw + hi) && hi < 1e3) hi *= 2.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (env.box_collides(c, hw + mid) ? hi : lo) = mid;
  }
  return lo;
}

nlohmann::json RolloutConfig::to_json() const {
  nlohmann::json j = {{"base_dt", base_dt},
                      {"physics_every", physics_every},
                      {"filter_every", filter_every},
                      {"episode", episode},
                      {"u_ref", vec2_json(u_ref)},
                      {"noise_sigma", noise_sigma},
                      {"delay", delay},
                      {"n_rays", n_rays},
                      {"r_max", r_max},
                      {"filter_enabled", filter_enabled},
                      {"record_trace", record_trace},
                      {"filter", filter.to_json()}};
  if (spawn) j["spawn"] = vec2_json(*spawn);
  return j;
}

RolloutConfig RolloutConfig::from_json(const nlohmann::json& j) {
  RolloutConfig c;
  c.base_dt = j.value("base_dt", c.base_dt);
  c.physics_every = j.value("physics_every", c.physics_every);
  c.filter_every = j.value("filter_every", c.filter_every);
  c.episode = j.value("episode", c.episode);
  if (j.contains("u_ref")) c.u_ref = vec2_from(j["u_ref"]);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.delay = j.value("delay", c.delay);
  c.n_rays = j.value("n_rays", c.n_rays);
  c.r_max = j.value("r_max", c.r_max);
  c.filter_enabled = j.value("filter_enabled", c.filter_enabled);
  c.record_trace = j.value("record_trace", c.record_trace);
  if (j.contains("spawn")) c.spawn = vec2_from(j["spawn"]);
  if (j.contains("filter")) c.filter = FilterConfig::from_json(j["filter"]);
  if (!(c.base_dt > 0.0) || c.physics_every < 1 || c.filter_every < 1 || !(c.episode > 0.0) ||
      c.noise_sigma < 0.0 || c.delay < 0.0 || c.n_rays < kObsBins || c.n_rays % kObsBins != 0) {
    throw std::invalid_argument("RolloutConfig: invalid parameters");
  }
  return c;
}

nlohmann::json TraceRecord::to_json() const {
  return {{"t", t},
          {"x", {x.p.x(), x.p.y(), x.v.x(), x.v.y()}},
          {"u_ref", vec2_json(u_ref)},
          {"u_star", vec2_json(u_star)},
          {"u_applied", vec2_json(u_applied)},
          {"delta", delta},
          {"h", h},
          {"intervened", intervened},
          {"accepted", accepted},
          {"fallback", fallback},
          {"sustained_dead_reckoning", sustained_dead_reckoning},
          {"age", age}};
}

Eigen::Vector2d default_spawn(const Environment& env) { return {1.0, 0.5 * env.extent.y()}; }

RolloutResult run_rollout(const Environment& env, const std::shared_ptr<const BarrierModel>& model,
                          const RolloutConfig& cfg, std::uint64_t seed) {
  if (cfg.filter_enabled && !model) throw std::invalid_argument("run_rollout: filter enabled without a model");
  Rng rng(seed);
  const double hw = cfg.filter.half_width;
  State x(cfg.spawn.value_or(default_spawn(env)), Eigen::Vector2d::Zero());
  if (env.box_collides(x.p, hw)) throw std::invalid_argument("run_rollout: spawn pose is in collision");

  std::optional<SafetyFilter> filter;
  if (cfg.filter_enabled) filter.emplace(model, cfg.filter);
  DelayLine delay(cfg.delay);

  RolloutResult res;
  res.min_h = std::numeric_limits<double>::infinity();
  res.min_h_at_acceptance = std::numeric_limits<double>::infinity();
  res.min_clearance = std::numeric_limits<double>::infinity();
  const long ticks = std::lround(cfg.episode / cfg.base_dt);
  bool collided = false;
  for (long k = 0; k < ticks && !collided; ++k) {
    const double t = k * cfg.base_dt;
    if (k % cfg.filter_every == 0) {
      TraceRecord rec;
      rec.t = t;
      rec.x = x;
      rec.u_ref = cfg.u_ref;
      if (filter) {
        const Observation o = bin_scan(raycast(env, x.p, cfg.n_rays, cfg.r_max), cfg.noise_sigma, rng, cfg.r_max);
        const FilterOutput out = filter->step(o, x, cfg.u_ref, cfg.filter_dt());
        rec.u_star = out.u_star;
        rec.delta = out.delta;
        rec.h = out.h;
        rec.intervened = out.intervened;
        rec.accepted = out.accepted;
        rec.fallback = out.fallback;
        rec.sustained_dead_reckoning = out.sustained_dead_reckoning;
        rec.age = out.age;
        res.min_h = std::min(res.min_h, out.min_h());
        if (out.accepted) {
          ++res.accepted_updates;
          res.min_h_at_acceptance = std::min(res.min_h_at_acceptance, out.min_h());
        }
        if (out.intervened) ++res.interventions;
      } else {
        rec.u_star = clamp_input(cfg.u_ref, cfg.filter.u_max);
      }
      delay.push(t, rec.u_star);
      rec.u_applied = delay.delayed(t);
      if (cfg.record_trace) res.trace.push_back(rec);
    }
    x = step(x, delay.delayed(t), cfg.base_dt);
    if ((k + 1) % cfg.physics_every == 0) {
      if (env.box_collides(x.p, hw)) {
        collided = true;
        res.collision_time = (k + 1) * cfg.base_dt;
      } else if (cfg.record_trace) {
        res.min_clearance = std::min(res.min_clearance, box_clearance(env, x.p, hw));
      }
    }
  }
  res.success = !collided;
  res.final_state = x;
  return res;
}

void save_trace(const RolloutResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trace: cannot open " + path);
  nlohmann::json header = {{"type", "header"},
                           {"format", 1},
                           {"success", r.success},
                           {"min_h", r.min_h},
                           {"accepted_updates", r.accepted_updates},
                           {"interventions", r.interventions},
                           {"steps", r.trace.size()}};
  if (r.collision_time) header["collision_time"] = *r.collision_time;
  out << header.dump() << "\n";
  for (const auto& rec : r.trace) {
    nlohmann::json j = rec.to_json();
    j["type"] = "step";
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------

nlohmann::json StudyConfig::to_json() const {
  return {{"format", 1},
          {"pillars", pillars},
          {"noise", noise},
          {"delay", delay},
          {"rollouts", rollouts},
          {"seed", seed},
          {"rollout", rollout.to_json()},
          {"environment",
           {{"radius_min", environment.radius_min},
            {"radius_max", environment.radius_max},
            {"extent", vec2_json(environment.extent)},
            {"spawn_strip", environment.spawn_strip}}}};
}

StudyConfig StudyConfig::from_json(const nlohmann::json& j) {
  if (j.value("format", 1) != 1) throw std::invalid_argument("StudyConfig: unsupported format");
  StudyConfig c;
  c.pillars = j.value("pillars", c.pillars);
  c.noise = j.value("noise", c.noise);
  c.delay = j.value("delay", c.delay);
  c.rollouts = j.value("rollouts", c.rollouts);
  c.seed = j.value("seed", c.seed);
  if (j.contains("rollout")) c.rollout = RolloutConfig::from_json(j["rollout"]);
  if (j.contains("environment")) {
    const auto& e = j["environment"];
    c.environment.radius_min = e.value("radius_min", c.environment.radius_min);
    c.environment.radius_max = e.value("radius_max", c.environment.radius_max);
    if (e.contains("extent")) c.environment.extent = vec2_from(e["extent"]);
    c.environment.spawn_strip = e.value("spawn_strip", c.environment.spawn_strip);
  }
  if (c.rollouts < 1 || c.pillars.empty() || c.noise.empty() || c.delay.empty()) {
    throw std::invalid_argument("StudyConfig: counts must be positive");
  }
  for (int p : c.pillars) {
    if (p < 0) throw std::invalid_argument("StudyConfig: negative pillar count");
  }
  return c;
}

nlohmann::json StudyCell::to_json() const {
  return {{"p", pillars},         {"sigma", noise}, {"tau", delay},      {"n", n},
          {"successes", successes}, {"rate", rate},   {"ci_low", ci_low}, {"ci_high", ci_high}};
}

std::pair<double, double> wilson_interval(int k, int n, double z) {
  if (n <= 0) return {0.0, 100.0};
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {100.0 * std::max(0.0, center - half), 100.0 * std::min(1.0, center + half)};
}

EnvironmentSpec study_environment(const StudyConfig& study, int pillars, int index) {
  EnvironmentSpec spec = study.environment;
  spec.pillars = pillars;
  spec.seed = mix(mix(study.seed, static_cast<std::uint64_t>(pillars)), static_cast<std::uint64_t>(index));
  return spec;
}

StudyCell run_cell(const std::shared_ptr<const BarrierModel>& model, const StudyConfig& study, int pillars,
                   double noise, double delay) {
  StudyCell cell;
  cell.pillars = pillars;
  cell.noise = noise;
  cell.delay = delay;
  RolloutConfig rc = study.rollout;
  rc.noise_sigma = noise;
  rc.delay = delay;
  rc.record_trace = false;
  for (int i = 0; i < study.rollouts; ++i) {
    const Environment env = sample_environment(study_environment(study, pillars, i));
    const std::uint64_t seed = mix(study_environment(study, pillars, i).seed,
                                   static_cast<std::uint64_t>(std::llround(noise * 1e6) * 1000 + std::llround(delay * 1e3)));
    const RolloutResult r = run_rollout(env, model, rc, seed);
    ++cell.n;
    if (r.success) ++cell.successes;
  }
  cell.rate = 100.0 * cell.successes / cell.n;
  std::tie(cell.ci_low, cell.ci_high) = wilson_interval(cell.successes, cell.n);
  return cell;
}

std::vector<StudyCell> run_study(const std::shared_ptr<const BarrierModel>& model, const StudyConfig& study) {
  std::vector<StudyCell> cells;
  for (double s : study.noise) {
    for (double t : study.delay) {
      for (int p : study.pillars) cells.push_back(run_cell(model, study, p, s, t));
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------

LevelSetGrid export_levelset(const BarrierModel& model, const Observation& o, const Eigen::Vector2d& v,
                             const GridSpec& spec, double r_max) {
  if (spec.nx < 1 || spec.ny < 1 || !(spec.x_max >= spec.x_min) || !(spec.y_max >= spec.y_min)) {
    throw std::invalid_argument("export_levelset: invalid grid");
  }
  LevelSetGrid g;
  g.spec = spec;
  g.velocity = v;
  g.values.resize(static_cast<std::size_t>(spec.nx) * spec.ny);
  std::vector<State> row(spec.nx);
  for (int j = 0; j < spec.ny; ++j) {
    for (int i = 0; i < spec.nx; ++i) row[i] = State(Eigen::Vector2d(spec.x(i), spec.y(j)), v);
    const auto evals = model.evaluate(o, row);
    for (int i = 0; i < spec.nx; ++i) g.values[static_cast<std::size_t>(j) * spec.nx + i] = static_cast<float>(evals[i].h);
  }
  constexpr int kArc = 8;
  for (int b = 0; b < kObsBins; ++b) {
    if (o(b) >= r_max) continue;
    for (int s = 0; s < kArc; ++s) {
      const double a = 2.0 * std::numbers::pi * (b + (s + 0.5) / kArc) / kObsBins;
      g.boundary.emplace_back(o(b) * std::cos(a), o(b) * std::sin(a));
    }
  }
  return g;
}

void save_levelset(const LevelSetGrid& g, const std::string& path) {
  nlohmann::json header = {{"format", 1},
                           {"nx", g.spec.nx},
                           {"ny", g.spec.ny},
                           {"x_min", g.spec.x_min},
                           {"x_max", g.spec.x_max},
                           {"y_min", g.spec.y_min},
                           {"y_max", g.spec.y_max},
                           {"velocity", vec2_json(g.velocity)},
                           {"boundary", nlohmann::json::array()}};
  for (const auto& p : g.boundary) header["boundary"].push_back(vec2_json(p));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_levelset: cannot open " + path);
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("save_levelset: write failed");
}

LevelSetGrid load_levelset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_levelset: cannot open " + path);
  std::string line;
  std::getline(in, line);
  const nlohmann::json h = nlohmann::json::parse(line);
  if (h.value("format", 0) != 1) throw std::runtime_error("load_levelset: unsupported format");
  LevelSetGrid g;
  g.spec.nx = h.at("nx");
  g.spec.ny = h.at("ny");
  g.spec.x_min = h.at("x_min");
  g.spec.x_max = h.at("x_max");
  g.spec.y_min = h.at("y_min");
  g.spec.y_max = h.at("y_max");
  g.velocity = vec2_from(h.at("velocity"));
  for (const auto& p : h.at("boundary")) g.boundary.push_back(vec2_from(p));
  g.values.resize(static_cast<std::size_t>(g.spec.nx) * g.spec.ny);
  in.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * sizeof(float)));
  if (!in) throw std::runtime_error("load_levelset: truncated payload");
  return g;
}

void render_ppm(const LevelSetGrid& g, const std::string& path, int scale) {
  if (scale < 1) throw std::invalid_argument("render_ppm: scale must be positive");
  const int w = g.spec.nx * scale, hgt = g.spec.ny * scale;
  std::vector<unsigned char> img(static_cast<std::size_t>(w) * hgt * 3);
  auto put = [&](int px, int py, unsigned char r, unsigned char gg, unsigned char b) {
    if (px < 0 || py < 0 || px >= w || py >= hgt) return;
    unsigned char* p = &img[(static_cast<std::size_t>(py) * w + px) * 3];
    p[0] = r;
    p[1] = gg;
    p[2] = b;
  };
  for (int j = 0; j < g.spec.ny; ++j) {
    for (int i = 0; i < g.spec.nx; ++i) {
      const bool safe = g.at(i, j) >= 0.0f;
      const int row = g.spec.ny - 1 - j;
      for (int dy = 0; dy < scale; ++dy) {
        for (int dx = 0; dx < scale; ++dx) {
          if (safe) {
            put(i * scale + dx, row * scale + dy, 150, 90, 200);
          } else {
            put(i * scale + dx, row * scale + dy, 235, 235, 235);
          }
        }
      }
    }
  }
  const double sx = (g.spec.nx - 1) / std::max(1e-12, g.spec.x_max - g.spec.x_min);
  const double sy = (g.spec.ny - 1) / std::max(1e-12, g.spec.y_max - g.spec.y_min);
  for (const auto& p : g.boundary) {
    const int i = static_cast<int>(std::lround((p.x() - g.spec.x_min) * sx));
    const int j = static_cast<int>(std::lround((p.y() - g.spec.y_min) * sy));
    const int row = g.spec.ny - 1 - j;
    for (int dy = 0; dy < scale; ++dy) {
      for (int dx = 0; dx < scale; ++dx) put(i * scale + dx, row * scale + dy, 220, 30, 30);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("render_ppm: cannot open " + path);
  out << "P6\n" << w << " " << hgt << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

}  // namespace obscbf
