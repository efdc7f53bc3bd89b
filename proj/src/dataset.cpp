#include "obscbf/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace obscbf {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kMagic[8] = {'O', 'B', 'S', 'C', 'B', 'F', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr int kMaxPoseTries = 10000;

}  // namespace

nlohmann::json DatasetConfig::to_json() const {
  return {{"observations", observations},
          {"v_max", v_max},
          {"r_max", r_max},
          {"pillars_min", pillars_min},
          {"pillars_max", pillars_max},
          {"panels_max", panels_max},
          {"extent", {extent.x(), extent.y()}},
          {"observations_per_environment", observations_per_environment},
          {"pose_clearance", pose_clearance},
          {"seed", seed}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.observations = j.value("observations", c.observations);
  c.v_max = j.value("v_max", c.v_max);
  c.r_max = j.value("r_max", c.r_max);
  c.pillars_min = j.value("pillars_min", c.pillars_min);
  c.pillars_max = j.value("pillars_max", c.pillars_max);
  c.panels_max = j.value("panels_max", c.panels_max);
  if (j.contains("extent")) c.extent = {j["extent"].at(0).get<double>(), j["extent"].at(1).get<double>()};
  c.observations_per_environment = j.value("observations_per_environment", c.observations_per_environment);
  c.pose_clearance = j.value("pose_clearance", c.pose_clearance);
  c.seed = j.value("seed", c.seed);
  return c;
}

State sample_state(Rng& rng, double r_max, double v_max) {
  std::uniform_real_distribution<double> bearing(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> distance(0.0, 1.1 * r_max);
  const double a = bearing(rng);
  const double d = distance(rng);
  State s;
  s.p = d * Eigen::Vector2d(std::cos(a), std::sin(a));
  s.v = sample_velocity(rng, v_max);
  return s;
}

Dataset build_dataset(const DatasetConfig& config) {
  if (config.observations < 1) throw std::invalid_argument("build_dataset: need at least one observation");
  if (config.observations_per_environment < 1) throw std::invalid_argument("build_dataset: invalid env reuse");
  Rng rng(config.seed);
  std::uniform_int_distribution<int> pillars(config.pillars_min, config.pillars_max);
  std::uniform_int_distribution<int> panels(0, config.panels_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  ds.config = config;
  ds.observations.resize(config.observations, kObsBins);
  Environment env;
  for (int i = 0; i < config.observations; ++i) {
    if (i % config.observations_per_environment == 0) {
      EnvironmentSpec spec;
      spec.pillars = pillars(rng);
      spec.panels = panels(rng);
      spec.extent = config.extent;
      spec.spawn_strip = 0.0;
      spec.seed = rng();
      env = sample_environment(spec);
    }
    Eigen::Vector2d pose;
    bool found = false;
    for (int attempt = 0; attempt < kMaxPoseTries && !found; ++attempt) {
      pose = {config.extent.x() * unit(rng), config.extent.y() * unit(rng)};
      found = !env.occupied(pose) && env.clearance(pose) >= config.pose_clearance;
    }
    if (!found) throw std::runtime_error("build_dataset: pose rejection overflow");
    const RawScan raw = raycast(env, pose, kDefaultRays, config.r_max);
    const Observation obs = bin_scan(raw, 0.0, rng, config.r_max);
    ds.observations.row(i) = obs.transpose().cast<float>();
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& stem) {
  {
    std::ofstream out(stem + ".bin", std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + stem + ".bin");
    const std::uint32_t cols = kObsBins;
    const std::uint64_t rows = static_cast<std::uint64_t>(ds.observations.rows());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(ds.observations.data()),
              static_cast<std::streamsize>(rows * cols * sizeof(float)));
    if (!out) throw std::runtime_error("save_dataset: write failed");
  }
  std::ofstream meta(stem + ".meta");
  if (!meta) throw std::runtime_error("save_dataset: cannot open " + stem + ".meta");
  nlohmann::json doc = {{"format", kVersion},
                        {"observations", ds.observations.rows()},
                        {"columns", kObsBins},
                        {"generator", ds.config.to_json()}};
  meta << doc.dump(2) << "\n";
}

Dataset load_dataset(const std::string& stem) {
  std::ifstream meta_in(stem + ".meta");
  if (!meta_in) throw std::runtime_error("load_dataset: cannot open " + stem + ".meta");
  const nlohmann::json meta = nlohmann::json::parse(meta_in);
  if (meta.value("format", 0u) != kVersion) throw std::runtime_error("load_dataset: version mismatch");

  std::ifstream in(stem + ".bin", std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + stem + ".bin");
  char magic[8];
  std::uint32_t version = 0, cols = 0;
  std::uint64_t rows = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  if (!in) throw std::runtime_error("load_dataset: truncated header");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("load_dataset: bad magic");
  if (version != kVersion) throw std::runtime_error("load_dataset: version mismatch");
  if (cols != kObsBins) throw std::runtime_error("load_dataset: unexpected column count");
  if (rows != meta.value("observations", std::uint64_t{0})) {
    throw std::runtime_error("load_dataset: row count disagrees with metadata");
  }

  Dataset ds;
  ds.config = DatasetConfig::from_json(meta.at("generator"));
  ds.observations.resize(static_cast<Eigen::Index>(rows), kObsBins);
  in.read(reinterpret_cast<char*>(ds.observations.data()), static_cast<std::streamsize>(rows * cols * sizeof(float)));
  if (!in) throw std::runtime_error("load_dataset: truncated payload");
  return ds;
}

}  // namespace obscbf
