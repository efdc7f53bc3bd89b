#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "obscbf/dynamics.hpp"
#include "obscbf/filter.hpp"
#include "obscbf/world.hpp"

namespace obscbf {

struct RolloutConfig {
  /// Base tick; physics collision checks and filter cycles run on multiples.
  double base_dt = 0.01;
  int physics_every = 2;  // 50 Hz
  int filter_every = 5;   // 20 Hz
  double episode = 10.0;
  ControlInput u_ref{2.0, 0.0};
  double noise_sigma = 0.0;
  double delay = 0.0;
  int n_rays = kDefaultRays;
  double r_max = kRangeMax;
  bool filter_enabled = true;
  /// Spawn position; defaults to 1 m from the left wall, centered vertically.
  std::optional<Eigen::Vector2d> spawn;
  bool record_trace = true;
  FilterConfig filter;

  double filter_dt() const { return base_dt * filter_every; }
  nlohmann::json to_json() const;
  static RolloutConfig from_json(const nlohmann::json& j);
};

/// One filter cycle of a rollout.
struct TraceRecord {
  double t = 0.0;
  State x;
  ControlInput u_ref = ControlInput::Zero();
  ControlInput u_star = ControlInput::Zero();
  ControlInput u_applied = ControlInput::Zero();
  double delta = 0.0;
  std::array<double, 4> h{};
  bool intervened = false;
  bool accepted = false;
  bool fallback = false;
  bool sustained_dead_reckoning = false;
  int age = 0;

  nlohmann::json to_json() const;
};

struct RolloutResult {
  bool success = false;
  std::optional<double> collision_time;
  State final_state;
  /// Minimum over the episode of the held certificate at the corners.
  double min_h = 0.0;
  /// Minimum corner h at switching acceptance instants (+inf if none).
  double min_h_at_acceptance = 0.0;
  int accepted_updates = 0;
  int interventions = 0;
  /// Smallest box clearance seen at physics checks (tracked with the trace).
  double min_clearance = 0.0;
  std::vector<TraceRecord> trace;
};

/// Largest margin m such that the square of half-width hw + m around c is
/// collision free (0 when the box itself collides).
double box_clearance(const Environment& env, const Eigen::Vector2d& c, double hw);

Eigen::Vector2d default_spawn(const Environment& env);

/// Simulates one episode from rest at the spawn point. The model may be null
/// only when the filter is disabled.
RolloutResult run_rollout(const Environment& env, const std::shared_ptr<const BarrierModel>& model,
                          const RolloutConfig& cfg, std::uint64_t seed);

/// Writes the trace as line-delimited records, the first being a header.
void save_trace(const RolloutResult& r, const std::string& path);

// ---------------------------------------------------------------------------

struct StudyConfig {
  std::vector<int> pillars{3, 5, 10};
  std::vector<double> noise{0.0, 0.02};
  std::vector<double> delay{0.0, 0.1};
  int rollouts = 100;
  std::uint64_t seed = 1;
  RolloutConfig rollout;
  EnvironmentSpec environment;

  nlohmann::json to_json() const;
  static StudyConfig from_json(const nlohmann::json& j);
};

struct StudyCell {
  int pillars = 0;
  double noise = 0.0;
  double delay = 0.0;
  int n = 0;
  int successes = 0;
  double rate = 0.0;  // percent
  double ci_low = 0.0;
  double ci_high = 0.0;

  nlohmann::json to_json() const;
};

/// Wilson score interval (percent) for k successes out of n.
std::pair<double, double> wilson_interval(int k, int n, double z = 1.959963984540054);

/// Environment of rollout i in a cell; depends only on (seed, pillars, i).
EnvironmentSpec study_environment(const StudyConfig& study, int pillars, int index);

StudyCell run_cell(const std::shared_ptr<const BarrierModel>& model, const StudyConfig& study, int pillars,
                   double noise, double delay);
std::vector<StudyCell> run_study(const std::shared_ptr<const BarrierModel>& model, const StudyConfig& study);

// ---------------------------------------------------------------------------

struct GridSpec {
  double x_min = -4.0, x_max = 4.0;
  double y_min = -4.0, y_max = 4.0;
  int nx = 161, ny = 161;

  double x(int i) const { return nx > 1 ? x_min + (x_max - x_min) * i / (nx - 1) : x_min; }
  double y(int j) const { return ny > 1 ? y_min + (y_max - y_min) * j / (ny - 1) : y_min; }
};

/// h over positions at a fixed velocity, in the certificate frame.
struct LevelSetGrid {
  GridSpec spec;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  /// Row-major, ny rows of nx values; row j is y(j).
  std::vector<float> values;
  /// Obstacle boundary implied by the observation (returns closer than r_max).
  std::vector<Eigen::Vector2d> boundary;

  float at(int i, int j) const { return values[static_cast<std::size_t>(j) * spec.nx + i]; }
};

LevelSetGrid export_levelset(const BarrierModel& model, const Observation& o, const Eigen::Vector2d& v,
                             const GridSpec& spec, double r_max = kRangeMax);

/// File: one JSON header line, then nx*ny little-endian float32 values.
void save_levelset(const LevelSetGrid& g, const std::string& path);
LevelSetGrid load_levelset(const std::string& path);

/// Binary PPM: h >= 0 purple, h < 0 light gray, boundary red. Each grid cell
/// becomes a scale x scale block; row 0 of the image is y_max.
void render_ppm(const LevelSetGrid& g, const std::string& path, int scale = 2);

}  // namespace obscbf
