#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "obscbf/dynamics.hpp"

namespace obscbf {

using Rng = std::mt19937_64;

inline constexpr int kObsBins = 32;
inline constexpr double kRangeMax = 4.0;
inline constexpr int kDefaultRays = 512;

/// Binned range observation in the robot-centered, world-axis-aligned frame.
/// Bin i covers bearings [i * 2pi/32, (i+1) * 2pi/32).
using Observation = Eigen::Matrix<double, kObsBins, 1>;

struct Pillar {
  Eigen::Vector2d center;
  double radius;
};

/// Oriented rectangle; size holds the full side lengths along the local axes.
struct Panel {
  Eigen::Vector2d center;
  Eigen::Vector2d size;
  double yaw = 0.0;

  std::array<Eigen::Vector2d, 4> corners() const;
  bool contains(const Eigen::Vector2d& q) const;
};

struct Segment {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

/// Static 2D world. When bounded, four walls enclose [0, w] x [0, h].
struct Environment {
  Eigen::Vector2d extent{20.0, 10.0};
  bool bounded = true;
  std::vector<Pillar> pillars;
  std::vector<Panel> panels;

  static Environment unbounded() {
    Environment env;
    env.bounded = false;
    return env;
  }

  std::vector<Segment> walls() const;

  /// True if q lies inside a pillar, a panel, or outside the walls.
  bool occupied(const Eigen::Vector2d& q) const;

  /// True if the axis-aligned square of half-width hw centered at c touches
  /// any obstacle or wall.
  bool box_collides(const Eigen::Vector2d& c, double hw) const;

  /// Euclidean distance from q to the nearest obstacle surface (q free).
  double clearance(const Eigen::Vector2d& q) const;
};

struct EnvironmentSpec {
  int pillars = 0;
  double radius_min = 0.75;
  double radius_max = 1.0;
  Eigen::Vector2d extent{20.0, 10.0};
  /// Pillar/panel-free strip [0, spawn_strip] along x.
  double spawn_strip = 2.0;
  int panels = 0;
  double panel_length_min = 1.0;
  double panel_length_max = 4.0;
  double panel_thickness = 0.2;
  std::uint64_t seed = 0;
};

/// Deterministic for a fixed spec. Throws std::runtime_error when an obstacle
/// cannot be placed within 10^4 rejection tries.
Environment sample_environment(const EnvironmentSpec& spec);

struct RawScan {
  std::vector<double> ranges;  // ray k points at bearing k * 2pi / n

  int n_rays() const { return static_cast<int>(ranges.size()); }
  double bearing(int k) const;
};

/// Exact ray casting against walls, pillars and panels, clipped to r_max.
/// Throws std::invalid_argument if origin is occupied.
RawScan raycast(const Environment& env, const Eigen::Vector2d& origin, int n_rays = kDefaultRays,
                double r_max = kRangeMax);

/// Adds iid Gaussian noise (clipped to [0.01, r_max]) and takes the per-bin
/// minimum. n_rays must be divisible by 32.
Observation bin_scan(const RawScan& raw, double noise_sigma, Rng& rng, double r_max = kRangeMax);

/// Bin index for a bearing (any angle, wrapped to [0, 2pi)).
int bin_of(double bearing);

/// Obstacle label for the position of x relative to the observation origin.
/// Anything at or beyond 4 m, or at or beyond the covering bin's return, is
/// obstacle. Velocity is ignored.
bool is_obstacle(const Observation& obs, const State& x, double r_max = kRangeMax);

/// Uniform velocity in [-v_max, v_max]^2.
Eigen::Vector2d sample_velocity(Rng& rng, double v_max);

/// State whose position lies exactly on the obstacle boundary implied by obs.
State boundary_sample(const Observation& obs, Rng& rng, double v_max, double r_max = kRangeMax);

/// Scene documents: {"format": 1, "extent": [w, h], "bounded": true,
/// "pillars": [{"center": [x, y], "radius": r}],
/// "panels": [{"center": [x, y], "size": [lx, ly], "yaw": a}]}.
nlohmann::json scene_to_json(const Environment& env);
Environment scene_from_json(const nlohmann::json& doc);
void save_scene(const Environment& env, const std::string& path);
Environment load_scene(const std::string& path);

}  // namespace obscbf
