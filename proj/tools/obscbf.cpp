// Command line front end: dataset generation, training, evaluation, studies,
// single rollouts, level-set export and the teleoperation server.

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "obscbf/dataset.hpp"
#include "obscbf/filter.hpp"
#include "obscbf/harness.hpp"
#include "obscbf/netcbf.hpp"
#include "obscbf/teleop.hpp"
#include "obscbf/training.hpp"

using namespace obscbf;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// Bad user input: missing files, malformed configs, invalid values.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

nlohmann::json section(const nlohmann::json& doc, const std::string& key) {
  return doc.contains(key) ? doc[key] : nlohmann::json::object();
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) throw ValidationError(what + " not found: " + path);
}

ModelParams load_model(const std::string& ckpt) {
  require_file(ckpt + ".json", "checkpoint");
  require_file(ckpt + ".bin", "checkpoint payload");
  return load_checkpoint(ckpt);
}

Dataset load_data(const std::string& stem) {
  require_file(stem + ".bin", "dataset");
  require_file(stem + ".meta", "dataset metadata");
  return load_dataset(stem);
}

Environment load_env(const std::string& scene) {
  require_file(scene, "scene");
  return load_scene(scene);
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Observation-conditioned barrier certificates: training and evaluation tools"};
  app.require_subcommand(1);

  // gen-dataset
  std::string gd_config, gd_out;
  int gd_obs = -1;
  long long gd_seed = -1;
  auto* gen = app.add_subcommand("gen-dataset", "Generate a dataset of simulated observations");
  gen->add_option("--config", gd_config, "Dataset config (JSON)");
  gen->add_option("--out", gd_out, "Output stem ({stem}.bin, {stem}.meta)")->required();
  gen->add_option("--observations", gd_obs, "Override the number of observations");
  gen->add_option("--seed", gd_seed, "Override the generator seed");

  // train
  std::string tr_config, tr_dataset, tr_out, tr_log, tr_init;
  int tr_e1 = -1, tr_e2 = -1, tr_ckpt_every = 0;
  bool tr_paper = false;
  auto* trn = app.add_subcommand("train", "Train the certificate networks");
  trn->add_option("--config", tr_config, "Training config (JSON with net/train sections)");
  trn->add_option("--dataset", tr_dataset, "Dataset stem")->required();
  trn->add_option("--out", tr_out, "Checkpoint path (without extension)")->required();
  trn->add_option("--log", tr_log, "Line-delimited epoch log");
  trn->add_option("--init", tr_init, "Start from this checkpoint instead of a fresh initialization");
  trn->add_option("--epochs1", tr_e1, "Override phase-1 epochs");
  trn->add_option("--epochs2", tr_e2, "Override phase-2 epochs");
  trn->add_option("--checkpoint-every", tr_ckpt_every, "Write {out}.epochN every N epochs");
  trn->add_flag("--paper-schedule", tr_paper, "Use the 100 + 250 epoch schedule");

  // eval-constraints
  std::string ev_config, ev_ckpt, ev_holdout, ev_out;
  int ev_states = 256;
  long long ev_seed = 5;
  auto* evc = app.add_subcommand("eval-constraints", "Violation rates on a holdout set");
  evc->add_option("--config", ev_config, "Holdout dataset config, used when --holdout is absent");
  evc->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  evc->add_option("--holdout", ev_holdout, "Holdout dataset stem");
  evc->add_option("--states", ev_states, "States per observation");
  evc->add_option("--seed", ev_seed, "State sampling seed");
  evc->add_option("--out", ev_out, "Write the result JSON here");

  // study
  std::string st_config, st_ckpt, st_out;
  int st_rollouts = -1;
  bool st_baseline = false;
  auto* study = app.add_subcommand("study", "Randomized closed-loop study over pillars, noise and delay");
  study->add_option("--config", st_config, "Study config (JSON)");
  study->add_option("--ckpt", st_ckpt, "Checkpoint path (not needed with --baseline)");
  study->add_option("--rollouts", st_rollouts, "Override rollouts per cell");
  study->add_option("--out", st_out, "Write the result table here");
  study->add_flag("--baseline", st_baseline, "Run without the safety filter");

  // rollout
  std::string ro_config, ro_ckpt, ro_scene, ro_trace, ro_out;
  long long ro_seed = 0;
  bool ro_unfiltered = false;
  auto* roll = app.add_subcommand("rollout", "Single closed-loop episode with a trace file");
  roll->add_option("--config", ro_config, "Rollout config (JSON)");
  roll->add_option("--ckpt", ro_ckpt, "Checkpoint path");
  roll->add_option("--scene", ro_scene, "Scene file")->required();
  roll->add_option("--trace", ro_trace, "Trace output (line-delimited JSON)");
  roll->add_option("--seed", ro_seed, "Noise seed");
  roll->add_option("--out", ro_out, "Write the summary here");
  roll->add_flag("--unfiltered", ro_unfiltered, "Apply the reference without filtering");

  // levelset
  std::string ls_config, ls_ckpt, ls_scene, ls_out, ls_ppm;
  std::vector<double> ls_pos, ls_vel{0.0, 0.0};
  int ls_cells = -1;
  auto* lvl = app.add_subcommand("levelset", "Export h over positions for one observation");
  lvl->add_option("--config", ls_config, "Optional config with a grid section");
  lvl->add_option("--ckpt", ls_ckpt, "Checkpoint path")->required();
  lvl->add_option("--scene", ls_scene, "Scene file")->required();
  lvl->add_option("--position", ls_pos, "Observation position x y (default spawn)")->expected(2);
  lvl->add_option("--velocity", ls_vel, "Velocity vx vy of the slice")->expected(2);
  lvl->add_option("--cells", ls_cells, "Grid cells per axis");
  lvl->add_option("--out", ls_out, "Grid file")->required();
  lvl->add_option("--ppm", ls_ppm, "Also render a PPM image");

  // serve-teleop
  std::string tp_config, tp_ckpt, tp_scene;
  int tp_port = -1;
  auto* srv = app.add_subcommand("serve-teleop", "Run the interactive teleoperation server");
  srv->add_option("--config", tp_config, "Teleop config (JSON)");
  srv->add_option("--ckpt", tp_ckpt, "Checkpoint path")->required();
  srv->add_option("--scene", tp_scene, "Scene file")->required();
  srv->add_option("--port", tp_port, "Override the port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*gen) {
      DatasetConfig c = DatasetConfig::from_json(read_config(gd_config));
      if (gd_obs >= 0) c.observations = gd_obs;
      if (gd_seed >= 0) c.seed = static_cast<std::uint64_t>(gd_seed);
      if (c.observations < 1) throw ValidationError("observations must be positive");
      const Dataset ds = build_dataset(c);
      ensure_parent(gd_out);
      save_dataset(ds, gd_out);
      std::cout << "wrote " << ds.size() << " observations to " << gd_out << "\n";
    } else if (*trn) {
      const nlohmann::json doc = read_config(tr_config);
      nlohmann::json tj = section(doc, "train");
      if (tr_paper) tj["schedule"] = "paper";
      TrainConfig tc = TrainConfig::from_json(tj);
      if (tr_e1 >= 0) tc.phase1.epochs = tr_e1;
      if (tr_e2 >= 0) tc.phase2.epochs = tr_e2;
      const Dataset ds = load_data(tr_dataset);
      ModelParams init = tr_init.empty()
                             ? ModelParams::initialize(NetConfig::from_json(section(doc, "net")),
                                                       doc.value("init_seed", std::uint64_t{1}))
                             : load_model(tr_init);
      std::ofstream log;
      if (!tr_log.empty()) {
        ensure_parent(tr_log);
        log.open(tr_log);
      }
      ensure_parent(tr_out);
      TrainResult r = train(ds, tc, init, [&](const EpochLog& l, const ModelParams& p) {
        const std::string line = l.to_json().dump();
        std::cout << line << std::endl;
        if (log) log << line << std::endl;
        if (tr_ckpt_every > 0 && l.epoch % tr_ckpt_every == 0) {
          save_checkpoint(p, tr_out + ".epoch" + std::to_string(l.epoch));
        }
      });
      r.params.metadata["dataset_path"] = tr_dataset;
      save_checkpoint(r.params, tr_out);
      std::cout << "wrote checkpoint " << tr_out << "\n";
    } else if (*evc) {
      const ModelParams p = load_model(ev_ckpt);
      const Dataset hold =
          ev_holdout.empty() ? build_dataset(DatasetConfig::from_json(read_config(ev_config))) : load_data(ev_holdout);
      if (ev_states < 1) throw ValidationError("--states must be positive");
      const ViolationStats s = evaluate_constraints(p, hold, ev_states, static_cast<std::uint64_t>(ev_seed));
      write_json(s.to_json(), ev_out);
      if (!ev_out.empty()) std::cout << s.to_json().dump() << "\n";
    } else if (*study) {
      StudyConfig sc = StudyConfig::from_json(read_config(st_config));
      if (st_rollouts >= 0) sc.rollouts = st_rollouts;
      if (sc.rollouts < 1) throw ValidationError("--rollouts must be positive");
      std::shared_ptr<const BarrierModel> model;
      if (st_baseline) {
        sc.rollout.filter_enabled = false;
      } else {
        if (st_ckpt.empty()) throw ValidationError("study needs --ckpt unless --baseline is given");
        model = std::make_shared<NeuralBarrier>(load_model(st_ckpt));
      }
      nlohmann::json out = {{"config", sc.to_json()}, {"cells", nlohmann::json::array()}};
      for (const StudyCell& cell : run_study(model, sc)) {
        std::cout << cell.to_json().dump() << std::endl;
        out["cells"].push_back(cell.to_json());
      }
      if (!st_out.empty()) write_json(out, st_out);
    } else if (*roll) {
      RolloutConfig rc = RolloutConfig::from_json(read_config(ro_config));
      const Environment env = load_env(ro_scene);
      std::shared_ptr<const BarrierModel> model;
      if (ro_unfiltered) {
        rc.filter_enabled = false;
      } else {
        if (ro_ckpt.empty()) throw ValidationError("rollout needs --ckpt unless --unfiltered is given");
        model = std::make_shared<NeuralBarrier>(load_model(ro_ckpt));
      }
      const RolloutResult r = run_rollout(env, model, rc, static_cast<std::uint64_t>(ro_seed));
      if (!ro_trace.empty()) {
        ensure_parent(ro_trace);
        save_trace(r, ro_trace);
      }
      nlohmann::json summary = {{"success", r.success},
                                {"final_state", {r.final_state.p.x(), r.final_state.p.y(), r.final_state.v.x(),
                                                 r.final_state.v.y()}},
                                {"accepted_updates", r.accepted_updates},
                                {"interventions", r.interventions},
                                {"min_clearance", r.min_clearance}};
      if (r.collision_time) summary["collision_time"] = *r.collision_time;
      if (rc.filter_enabled) summary["min_h"] = r.min_h;
      write_json(summary, ro_out);
    } else if (*lvl) {
      const nlohmann::json doc = read_config(ls_config);
      const ModelParams p = load_model(ls_ckpt);
      const Environment env = load_env(ls_scene);
      const Eigen::Vector2d at = ls_pos.empty() ? default_spawn(env) : Eigen::Vector2d(ls_pos[0], ls_pos[1]);
      if (env.occupied(at)) throw ValidationError("--position lies inside an obstacle");
      GridSpec spec;
      const nlohmann::json g = section(doc, "grid");
      spec.x_min = g.value("x_min", spec.x_min);
      spec.x_max = g.value("x_max", spec.x_max);
      spec.y_min = g.value("y_min", spec.y_min);
      spec.y_max = g.value("y_max", spec.y_max);
      spec.nx = g.value("nx", spec.nx);
      spec.ny = g.value("ny", spec.ny);
      if (ls_cells > 0) spec.nx = spec.ny = ls_cells;
      Rng rng(0);
      const Observation o = bin_scan(raycast(env, at), 0.0, rng);
      const NeuralBarrier model(p);
      const LevelSetGrid grid = export_levelset(model, o, {ls_vel[0], ls_vel[1]}, spec);
      ensure_parent(ls_out);
      save_levelset(grid, ls_out);
      if (!ls_ppm.empty()) {
        ensure_parent(ls_ppm);
        render_ppm(grid, ls_ppm);
      }
      std::cout << "wrote " << spec.nx << "x" << spec.ny << " grid to " << ls_out << "\n";
    } else if (*srv) {
      teleop::TeleopConfig tc = teleop::TeleopConfig::from_json(read_config(tp_config));
      if (tp_port >= 0) tc.port = tp_port;
      const auto model = std::make_shared<NeuralBarrier>(load_model(tp_ckpt));
      auto session = std::make_shared<teleop::Session>(load_env(tp_scene), model, tc);
      teleop::Server server(session, tc);
      const int port = server.start();
      std::cout << "listening on ws://" << tc.host << ":" << port << std::endl;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
