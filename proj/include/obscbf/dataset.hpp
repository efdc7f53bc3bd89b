#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "obscbf/world.hpp"

namespace obscbf {

/// Generator settings for training observations. Stored verbatim in the
/// dataset metadata.
struct DatasetConfig {
  int observations = 2000;
  double v_max = 3.0;
  double r_max = kRangeMax;
  int pillars_min = 0;
  int pillars_max = 12;
  int panels_max = 3;
  Eigen::Vector2d extent{20.0, 10.0};
  int observations_per_environment = 4;
  /// Minimum distance from the sampled robot position to any obstacle.
  double pose_clearance = 0.3;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

/// Stored observations only; states are sampled fresh whenever needed and
/// labelled with is_obstacle on the fly.
struct Dataset {
  using ObsMatrix = Eigen::Matrix<float, Eigen::Dynamic, kObsBins, Eigen::RowMajor>;

  ObsMatrix observations;
  DatasetConfig config;

  int size() const { return static_cast<int>(observations.rows()); }
  Observation observation(int i) const { return observations.row(i).transpose().cast<double>(); }
};

/// Bearing ~ U[0, 2pi), distance ~ U[0, 1.1 r_max], velocity components
/// ~ U[-v_max, v_max].
State sample_state(Rng& rng, double r_max, double v_max);

/// Throws std::runtime_error if a collision-free pose cannot be found.
Dataset build_dataset(const DatasetConfig& config);

/// Writes {stem}.bin (magic, version, shape, float32 rows) and {stem}.meta.
void save_dataset(const Dataset& ds, const std::string& stem);
Dataset load_dataset(const std::string& stem);

}  // namespace obscbf
