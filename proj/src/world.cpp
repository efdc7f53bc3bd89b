#include "obscbf/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace obscbf {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kMaxRejections = 10000;

Eigen::Vector2d rotate(const Eigen::Vector2d& q, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * q.x() - s * q.y(), s * q.x() + c * q.y()};
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

// Distance along the unit ray (o, d) to the segment, or +inf.
double ray_segment(const Eigen::Vector2d& o, const Eigen::Vector2d& d, const Segment& seg) {
  const Eigen::Vector2d e = seg.b - seg.a;
  const double denom = cross(d, e);
  if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
  const Eigen::Vector2d w = seg.a - o;
  const double t = cross(w, e) / denom;
  const double s = cross(w, d) / denom;
  if (t < 0.0 || s < 0.0 || s > 1.0) return std::numeric_limits<double>::infinity();
  return t;
}

double ray_circle(const Eigen::Vector2d& o, const Eigen::Vector2d& d, const Pillar& c) {
  const Eigen::Vector2d oc = c.center - o;
  const double tc = oc.dot(d);
  const double disc = tc * tc - (oc.squaredNorm() - c.radius * c.radius);
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double t = tc - std::sqrt(disc);
  return t >= 0.0 ? t : std::numeric_limits<double>::infinity();
}

double point_segment_distance(const Eigen::Vector2d& q, const Segment& seg) {
  const Eigen::Vector2d e = seg.b - seg.a;
  const double len2 = e.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((q - seg.a).dot(e) / len2, 0.0, 1.0) : 0.0;
  return (seg.a + s * e - q).norm();
}

// Separating-axis test between an axis-aligned box and an oriented panel.
bool box_panel_overlap(const Eigen::Vector2d& c, double hw, const Panel& panel) {
  const auto corners = panel.corners();
  const std::array<Eigen::Vector2d, 4> box = {
      Eigen::Vector2d(c.x() - hw, c.y() - hw), Eigen::Vector2d(c.x() + hw, c.y() - hw),
      Eigen::Vector2d(c.x() + hw, c.y() + hw), Eigen::Vector2d(c.x() - hw, c.y() + hw)};
  const std::array<Eigen::Vector2d, 4> axes = {Eigen::Vector2d::UnitX(), Eigen::Vector2d::UnitY(),
                                               rotate(Eigen::Vector2d::UnitX(), panel.yaw),
                                               rotate(Eigen::Vector2d::UnitY(), panel.yaw)};
  for (const auto& axis : axes) {
    double a_min = std::numeric_limits<double>::infinity(), a_max = -a_min;
    double b_min = a_min, b_max = a_max;
    for (const auto& q : box) {
      a_min = std::min(a_min, q.dot(axis));
      a_max = std::max(a_max, q.dot(axis));
    }
    for (const auto& q : corners) {
      b_min = std::min(b_min, q.dot(axis));
      b_max = std::max(b_max, q.dot(axis));
    }
    if (a_max < b_min || b_max < a_min) return false;
  }
  return true;
}

Eigen::Vector2d vec2(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::array<Eigen::Vector2d, 4> Panel::corners() const {
  const Eigen::Vector2d h = 0.5 * size;
  return {center + rotate({-h.x(), -h.y()}, yaw), center + rotate({h.x(), -h.y()}, yaw),
          center + rotate({h.x(), h.y()}, yaw), center + rotate({-h.x(), h.y()}, yaw)};
}

bool Panel::contains(const Eigen::Vector2d& q) const {
  const Eigen::Vector2d local = rotate(q - center, -yaw);
  return std::abs(local.x()) <= 0.5 * size.x() && std::abs(local.y()) <= 0.5 * size.y();
}

std::vector<Segment> Environment::walls() const {
  if (!bounded) return {};
  const double w = extent.x(), h = extent.y();
  return {{{0, 0}, {w, 0}}, {{w, 0}, {w, h}}, {{w, h}, {0, h}}, {{0, h}, {0, 0}}};
}

bool Environment::occupied(const Eigen::Vector2d& q) const {
  if (bounded && (q.x() <= 0.0 || q.y() <= 0.0 || q.x() >= extent.x() || q.y() >= extent.y())) return true;
  for (const auto& c : pillars) {
    if ((q - c.center).norm() <= c.radius) return true;
  }
  for (const auto& panel : panels) {
    if (panel.contains(q)) return true;
  }
  return false;
}

bool Environment::box_collides(const Eigen::Vector2d& c, double hw) const {
  if (bounded && (c.x() - hw <= 0.0 || c.y() - hw <= 0.0 || c.x() + hw >= extent.x() ||
                  c.y() + hw >= extent.y())) {
    return true;
  }
  const Eigen::Vector2d lo = c.array() - hw;
  const Eigen::Vector2d hi = c.array() + hw;
  for (const auto& pillar : pillars) {
    const Eigen::Vector2d nearest = pillar.center.cwiseMax(lo).cwiseMin(hi);
    if ((nearest - pillar.center).norm() < pillar.radius) return true;
  }
  for (const auto& panel : panels) {
    if (box_panel_overlap(c, hw, panel)) return true;
  }
  return false;
}

double Environment::clearance(const Eigen::Vector2d& q) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& seg : walls()) d = std::min(d, point_segment_distance(q, seg));
  for (const auto& c : pillars) d = std::min(d, (q - c.center).norm() - c.radius);
  for (const auto& panel : panels) {
    const Eigen::Vector2d local = rotate(q - panel.center, -panel.yaw).cwiseAbs();
    const Eigen::Vector2d out = (local - 0.5 * panel.size).cwiseMax(0.0);
    d = std::min(d, out.norm());
  }
  return d;
}

Environment sample_environment(const EnvironmentSpec& spec) {
  if (spec.pillars < 0 || spec.panels < 0) throw std::invalid_argument("sample_environment: negative count");
  if (spec.radius_min <= 0.0 || spec.radius_max < spec.radius_min) {
    throw std::invalid_argument("sample_environment: invalid radius range");
  }
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Environment env;
  env.extent = spec.extent;
  const double w = spec.extent.x(), h = spec.extent.y();

  for (int i = 0; i < spec.pillars; ++i) {
    const double r = spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRejections && !placed; ++attempt) {
      const Eigen::Vector2d c(w * unit(rng), h * unit(rng));
      if (c.x() - r < spec.spawn_strip || c.x() + r > w || c.y() - r < 0.0 || c.y() + r > h) continue;
      env.pillars.push_back({c, r});
      placed = true;
    }
    if (!placed) throw std::runtime_error("sample_environment: could not place pillar (overcrowded spec)");
  }

  for (int i = 0; i < spec.panels; ++i) {
    const double len = spec.panel_length_min + (spec.panel_length_max - spec.panel_length_min) * unit(rng);
    const double yaw = std::numbers::pi * unit(rng);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRejections && !placed; ++attempt) {
      Panel panel{{w * unit(rng), h * unit(rng)}, {len, spec.panel_thickness}, yaw};
      bool inside = true;
      for (const auto& q : panel.corners()) {
        if (q.x() < spec.spawn_strip || q.x() > w || q.y() < 0.0 || q.y() > h) inside = false;
      }
      if (!inside) continue;
      env.panels.push_back(panel);
      placed = true;
    }
    if (!placed) throw std::runtime_error("sample_environment: could not place panel (overcrowded spec)");
  }
  return env;
}

double RawScan::bearing(int k) const { return kTwoPi * k / static_cast<double>(ranges.size()); }

RawScan raycast(const Environment& env, const Eigen::Vector2d& origin, int n_rays, double r_max) {
  if (n_rays <= 0) throw std::invalid_argument("raycast: n_rays must be positive");
  if (env.occupied(origin)) throw std::invalid_argument("raycast: origin inside an obstacle");
  std::vector<Segment> segments = env.walls();
  for (const auto& panel : env.panels) {
    const auto c = panel.corners();
    for (int k = 0; k < 4; ++k) segments.push_back({c[k], c[(k + 1) % 4]});
  }
  // Obstacles farther than r_max plus their extent can never be hit.
  std::vector<Pillar> near;
  for (const auto& p : env.pillars) {
    if ((p.center - origin).norm() - p.radius <= r_max) near.push_back(p);
  }

  RawScan scan;
  scan.ranges.resize(n_rays);
  for (int k = 0; k < n_rays; ++k) {
    const double a = kTwoPi * k / n_rays;
    const Eigen::Vector2d d(std::cos(a), std::sin(a));
    double t = r_max;
    for (const auto& seg : segments) t = std::min(t, ray_segment(origin, d, seg));
    for (const auto& p : near) t = std::min(t, ray_circle(origin, d, p));
    scan.ranges[k] = t;
  }
  return scan;
}

Observation bin_scan(const RawScan& raw, double noise_sigma, Rng& rng, double r_max) {
  const int n = raw.n_rays();
  if (n == 0 || n % kObsBins != 0) throw std::invalid_argument("bin_scan: ray count must be a multiple of 32");
  const int per_bin = n / kObsBins;
  Observation obs;
  obs.setConstant(r_max);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (int k = 0; k < n; ++k) {
    double r = raw.ranges[k];
    if (noise_sigma > 0.0) r = std::clamp(r + noise(rng), 0.01, r_max);
    double& bin = obs(k / per_bin);
    bin = std::min(bin, r);
  }
  return obs;
}

int bin_of(double bearing) {
  double a = std::fmod(bearing, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  const int b = static_cast<int>(a / (kTwoPi / kObsBins));
  return std::clamp(b, 0, kObsBins - 1);
}

bool is_obstacle(const Observation& obs, const State& x, double r_max) {
  const double d = x.p.norm();
  if (d >= r_max) return true;
  if (d == 0.0) return false;
  return d >= obs(bin_of(std::atan2(x.p.y(), x.p.x())));
}

Eigen::Vector2d sample_velocity(Rng& rng, double v_max) {
  std::uniform_real_distribution<double> vel(-v_max, v_max);
  const double vx = vel(rng);
  const double vy = vel(rng);
  return {vx, vy};
}

State boundary_sample(const Observation& obs, Rng& rng, double v_max, double r_max) {
  std::uniform_int_distribution<int> pick(0, kObsBins - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int bin = pick(rng);
  const double width = kTwoPi / kObsBins;
  const double a = width * (bin + unit(rng));
  const double r = std::min(obs(bin), r_max);
  // Keep the bearing strictly inside the bin so the label uses the same range.
  const double bearing = std::clamp(a, width * bin, std::nextafter(width * (bin + 1), 0.0));
  State s;
  s.p = r * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
  s.v = sample_velocity(rng, v_max);
  return s;
}

nlohmann::json scene_to_json(const Environment& env) {
  nlohmann::json doc;
  doc["format"] = 1;
  doc["extent"] = {env.extent.x(), env.extent.y()};
  doc["bounded"] = env.bounded;
  doc["pillars"] = nlohmann::json::array();
  for (const auto& p : env.pillars) {
    doc["pillars"].push_back({{"center", {p.center.x(), p.center.y()}}, {"radius", p.radius}});
  }
  doc["panels"] = nlohmann::json::array();
  for (const auto& p : env.panels) {
    doc["panels"].push_back(
        {{"center", {p.center.x(), p.center.y()}}, {"size", {p.size.x(), p.size.y()}}, {"yaw", p.yaw}});
  }
  return doc;
}

Environment scene_from_json(const nlohmann::json& doc) {
  if (doc.value("format", 0) != 1) throw std::invalid_argument("scene: unsupported format version");
  Environment env;
  env.extent = vec2(doc.at("extent"));
  env.bounded = doc.value("bounded", true);
  for (const auto& p : doc.value("pillars", nlohmann::json::array())) {
    const double r = p.at("radius").get<double>();
    if (r <= 0.0) throw std::invalid_argument("scene: pillar radius must be positive");
    env.pillars.push_back({vec2(p.at("center")), r});
  }
  for (const auto& p : doc.value("panels", nlohmann::json::array())) {
    env.panels.push_back({vec2(p.at("center")), vec2(p.at("size")), p.value("yaw", 0.0)});
  }
  return env;
}

void save_scene(const Environment& env, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scene: cannot open " + path);
  out << scene_to_json(env).dump(2) << "\n";
}

Environment load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scene: cannot open " + path);
  return scene_from_json(nlohmann::json::parse(in));
}

}  // namespace obscbf
