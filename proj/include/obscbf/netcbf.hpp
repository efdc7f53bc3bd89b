#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "obscbf/dynamics.hpp"
#include "obscbf/mlp.hpp"
#include "obscbf/world.hpp"

namespace obscbf {

/// Architecture and static constants of the certificate networks.
struct NetConfig {
  std::vector<int> latent_hidden{256, 256};
  int latent_dim = 128;
  std::vector<int> head_hidden{128, 128};
  /// Number of rank-1 feature matrices summed into P (1x4 each) and R (1x2).
  int features = 32;
  double dropout = 0.1;
  double eps_r = 1e-3;
  double u_max = kDefaultInputLimit;
  /// Input normalization: ranges and positions are divided by range_scale,
  /// velocities by velocity_scale.
  double range_scale = kRangeMax;
  double velocity_scale = 3.0;
  /// States closer to the origin are excluded from the K matrix.
  double r_min = 0.05;
  /// Initial scale of the P and R feature output layers.
  double p_output_scale = 0.05;
  double r_output_scale = 0.2;

  static constexpr int kInputDim = kObsBins + 4;

  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
};

/// Weights of the latent, CBF (P features) and controller (R features)
/// networks. Stored in float32.
struct ModelParams {
  NetConfig config;
  nn::Mlp<float> latent;
  nn::Mlp<float> cbf_head;
  nn::Mlp<float> ctrl_head;
  /// Free-form provenance (training config, dataset, seeds).
  nlohmann::json metadata = nlohmann::json::object();

  static ModelParams initialize(const NetConfig& config, std::uint64_t seed);

  std::size_t parameter_count() const {
    return latent.parameter_count() + cbf_head.parameter_count() + ctrl_head.parameter_count();
  }
};

// ---------------------------------------------------------------------------
// Class-K function.

/// Ratio alpha(h)/h: 2 for h >= 0, 1/(0.5 + |h|) otherwise.
double rho(double h);
/// d rho / dh.
double rho_derivative(double h);
/// alpha(h) = rho(h) * h.
double alpha(double h);

// ---------------------------------------------------------------------------
// State-dependent Riccati algebra on top of the feature matrices.

/// Feature matrices for one (o, x): P~ (F x 4), dP~/dx_i (F x 4 each) and
/// R~ (F x 2).
struct FeatureMatrices {
  Eigen::Matrix<double, Eigen::Dynamic, 4> p;
  std::array<Eigen::Matrix<double, Eigen::Dynamic, 4>, 4> p_dx;
  Eigen::Matrix<double, Eigen::Dynamic, 2> r;
  Eigen::VectorXd z;  // latent variable the heads were evaluated on
};

/// S = P + 0.5 M with M_ik = sum_j x_j dP_jk/dx_i, so that
/// grad_x (x' P(x) x) = 2 S x.
Eigen::Matrix4d gradient_s(const Eigen::Matrix4d& p, const std::array<Eigen::Matrix4d, 4>& p_dx,
                           const Eigen::Vector4d& x);

/// Raw SDRE feedback u = -R^-1 B' S x.
ControlInput sdre_control(const Eigen::Matrix4d& s, const Eigen::Matrix2d& r, const Eigen::Vector4d& x);

/// Symmetric part of A'S + S'A - 2 S'B R^-1 B'S - rho(h) (I/|x|^2 - P).
/// Throws std::domain_error if |x| < r_min.
Eigen::Matrix4d k_matrix(const Eigen::Matrix4d& s, const Eigen::Matrix4d& p, const Eigen::Matrix2d& r,
                         const Eigen::Vector4d& x, double r_min);

/// Everything the certificate produces at one (o, x).
struct CertificateEval {
  Eigen::VectorXd z;
  Eigen::Matrix4d P;
  Eigen::Matrix2d R;
  std::array<Eigen::Matrix4d, 4> dP;  // dP/dx_i
  Eigen::Matrix4d S;
  double h = 0.0;
  ControlInput u = ControlInput::Zero();
  Eigen::Vector4d grad_h = Eigen::Vector4d::Zero();  // -2 S x
  /// Valid only when has_k (|x| >= r_min).
  Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
  bool has_k = false;
};

/// Assembles P, R, S, h, u, K from feature matrices.
CertificateEval assemble_certificate(const FeatureMatrices& f, const Eigen::Vector4d& x, double eps_r,
                                     double r_min);

/// Double-precision evaluator of trained parameters. Immutable and reentrant.
class CertificateNetwork {
 public:
  explicit CertificateNetwork(const ModelParams& params);

  const NetConfig& config() const { return config_; }

  CertificateEval forward(const Observation& o, const State& x) const;
  /// One observation, several states (e.g. the four bounding-box corners).
  std::vector<CertificateEval> forward(const Observation& o, std::span<const State> xs) const;
  /// Paired observations and states, evaluated as a single batch.
  std::vector<CertificateEval> forward(std::span<const Observation> os, std::span<const State> xs) const;

  Eigen::Matrix4d gradient_s(const Observation& o, const State& x) const { return forward(o, x).S; }
  /// Throws std::domain_error if |x| < r_min.
  Eigen::Matrix4d k_matrix(const Observation& o, const State& x) const;

  /// Feature matrices without assembling the certificate (used by tests).
  std::vector<FeatureMatrices> features(std::span<const Observation> os, std::span<const State> xs) const;

 private:
  NetConfig config_;
  nn::Mlp<double> latent_;
  nn::Mlp<double> cbf_head_;
  nn::Mlp<double> ctrl_head_;
};

/// Network input encoding of (o, x) and its constant derivative with respect
/// to x (column i is d input / d x_i).
template <typename S>
void encode_inputs(const NetConfig& c, std::span<const Observation> os, std::span<const State> xs,
                   nn::Mat<S>& in, nn::Mat<S>& in_tan);

// ---------------------------------------------------------------------------
// Checkpoints: {path}.json (metadata, tensor table) + {path}.bin (float32).

/// Tensor names in storage order, e.g. "latent.0.weight", "cbf_head.2.bias".
std::vector<std::string> tensor_names(const ModelParams& params);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace obscbf
