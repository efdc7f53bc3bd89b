#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "obscbf/dataset.hpp"
#include "obscbf/netcbf.hpp"

namespace obscbf {

/// Weights and slacks of the multi-objective loss.
struct LossWeights {
  double obstacle = 2.0;   // lambda_1, h <= 0 on obstacle samples
  double safe = 0.1;       // lambda_2, safe set expansion
  double input = 1.0;      // lambda_3, input constraint
  double lie = 1.0;        // lambda_4, matrix invariance condition
  double boundary = 2.0;   // lambda_5, boundary samples
  double eps_obstacle = 0.05;
  double eps_lie = 0.01;
  double reg = 1e-3;       // |dP/dx|_F^2 regularizer, per sample

  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

struct PhaseConfig {
  int epochs = 0;
  int observations_per_batch = 32;
  int states_per_observation = 128;
  int boundary_per_observation = 0;
};

struct TrainConfig {
  PhaseConfig phase1{30, 32, 128, 0};
  PhaseConfig phase2{60, 32, 256, 64};
  LossWeights weights;
  double learning_rate = 1e-3;
  /// Cosine decay from learning_rate to learning_rate * lr_final_factor
  /// across both phases.
  double lr_final_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient norm clip on the per-sample mean gradient (0 = off).
  double grad_clip = 0.0;
  std::uint64_t seed = 7;
  /// Abort when the mean per-sample loss of a batch exceeds this.
  double divergence_threshold = 1e6;

  /// 30 + 60 epochs on the desk-scale dataset.
  static TrainConfig desk() { return {}; }
  /// 100 + 250 epochs.
  static TrainConfig paper_schedule();

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainingSample {
  int obs = 0;  // index into Batch::observations
  State x;
  bool obstacle = false;
  bool boundary = false;
};

struct Batch {
  std::vector<Observation> observations;
  std::vector<TrainingSample> samples;
};

/// Fresh states for the given observations: `states` from sample_state plus
/// `boundary` boundary samples each, labelled with is_obstacle.
Batch sample_batch(const Dataset& ds, std::span<const int> obs_indices, int states, int boundary, Rng& rng);

/// Per-term sums over a batch. total() is J.
struct LossBreakdown {
  double obstacle = 0.0;
  double safe = 0.0;
  double input = 0.0;
  double lie = 0.0;
  double boundary = 0.0;
  double reg = 0.0;
  int samples = 0;

  double total() const { return obstacle + safe + input + lie + boundary + reg; }
  LossBreakdown& operator+=(const LossBreakdown& o);
  nlohmann::json to_json() const;
};

/// Adds the contribution of one evaluated sample (already weighted).
void accumulate_loss(const CertificateEval& e, const Eigen::Vector4d& x, bool obstacle, bool boundary,
                     const LossWeights& w, double u_max, LossBreakdown& acc);

/// J on a batch, evaluated in double precision without dropout.
LossBreakdown loss_batch(const ModelParams& params, const Batch& batch, const LossWeights& weights);

template <typename S>
struct Networks {
  nn::Mlp<S> latent;
  nn::Mlp<S> cbf_head;
  nn::Mlp<S> ctrl_head;
};

template <typename S>
struct NetworksGrad {
  nn::MlpGrad<S> latent;
  nn::MlpGrad<S> cbf_head;
  nn::MlpGrad<S> ctrl_head;

  static NetworksGrad zeros_like(const Networks<S>& n) {
    return {nn::MlpGrad<S>::zeros_like(n.latent), nn::MlpGrad<S>::zeros_like(n.cbf_head),
            nn::MlpGrad<S>::zeros_like(n.ctrl_head)};
  }
  void set_zero() {
    latent.set_zero();
    cbf_head.set_zero();
    ctrl_head.set_zero();
  }
};

/// J on a batch and, if grad is non-null, dJ/dparams accumulated into grad.
/// Dropout on the latent variable is applied when dropout_rng is non-null.
template <typename S>
LossBreakdown loss_and_gradient(const NetConfig& config, const Networks<S>& nets, const Batch& batch,
                                const LossWeights& weights, Rng* dropout_rng, NetworksGrad<S>* grad);

struct EpochLog {
  int epoch = 0;  // global, 1-based
  int phase = 1;
  LossBreakdown sums;
  double mean_total = 0.0;
  double learning_rate = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Phase 1 then phase 2 (boundary samples on). Deterministic for a fixed
/// seed. Throws TrainingDiverged on non-finite or exploding loss.
TrainResult train(const Dataset& dataset, const TrainConfig& config, const ModelParams& init,
                  const std::function<void(const EpochLog&, const ModelParams&)>& on_epoch = {});

/// Violation percentages over observations x random states.
struct ViolationStats {
  double obstacle_rate = 0.0;
  double input_rate = 0.0;
  double lie_rate = 0.0;
  long obstacle_samples = 0;
  long total_samples = 0;

  nlohmann::json to_json() const;
};

ViolationStats evaluate_constraints(const ModelParams& params, const Dataset& holdout, int states_per_observation,
                                    std::uint64_t seed);

/// Scalar invariance residual grad_h . (A x + B u) + alpha(h); negative means
/// the condition is violated.
double lie_residual(const CertificateEval& e, const Eigen::Vector4d& x, const ControlInput& u);

}  // namespace obscbf
