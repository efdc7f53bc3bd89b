#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "obscbf/dynamics.hpp"
#include "obscbf/netcbf.hpp"
#include "obscbf/world.hpp"

namespace obscbf {

/// h and its state gradient at one state.
struct BarrierEval {
  double h = 0.0;
  Eigen::Vector4d grad = Eigen::Vector4d::Zero();
};

/// Observation-conditioned barrier as seen by the filter. States are
/// expressed in the certificate frame (observation origin at zero).
class BarrierModel {
 public:
  virtual ~BarrierModel() = default;
  virtual std::vector<BarrierEval> evaluate(const Observation& o, std::span<const State> xs) const = 0;
};

/// The learned certificate.
class NeuralBarrier : public BarrierModel {
 public:
  explicit NeuralBarrier(const ModelParams& params) : net_(params) {}
  std::vector<BarrierEval> evaluate(const Observation& o, std::span<const State> xs) const override;
  const CertificateNetwork& network() const { return net_; }

 private:
  CertificateNetwork net_;
};

/// h = 1 - x'Px with a constant P; ignores the observation.
class QuadraticBarrier : public BarrierModel {
 public:
  explicit QuadraticBarrier(const Eigen::Matrix4d& p) : p_(0.5 * (p + p.transpose())) {}
  std::vector<BarrierEval> evaluate(const Observation& o, std::span<const State> xs) const override;
  const Eigen::Matrix4d& p() const { return p_; }

 private:
  Eigen::Matrix4d p_;
};

/// Analytic observation-dependent stub:
/// h = 1 - |p + lead v|^2 / d^2 - |v|^2 / v_scale^2 with d the shortest return
/// of the observation, so h < 0 wherever a position reaches the nearest
/// obstacle. A positive lead keeps the input in the constraint at rest.
class RangeBarrier : public BarrierModel {
 public:
  explicit RangeBarrier(double v_scale = 4.0, double lead = 0.0) : v_scale_(v_scale), lead_(lead) {}
  std::vector<BarrierEval> evaluate(const Observation& o, std::span<const State> xs) const override;

 private:
  double v_scale_;
  double lead_;
};

/// h = 1 everywhere: never constrains the input.
class TrivialBarrier : public BarrierModel {
 public:
  std::vector<BarrierEval> evaluate(const Observation& o, std::span<const State> xs) const override;
};

// ---------------------------------------------------------------------------

struct FilterConfig {
  double u_max = kDefaultInputLimit;
  /// Sides of the regular polygon inscribed in the input disk.
  int polygon_sides = 16;
  double lambda_s = 1e3;
  double lambda_g = 0.1;
  /// Consecutive rejected updates before the sustained-dead-reckoning flag.
  int eta = 3;
  double half_width = 0.26;
  /// Fallback braking gain, u = clamp(-k_v v).
  double k_v = 4.0;

  nlohmann::json to_json() const;
  static FilterConfig from_json(const nlohmann::json& j);
};

/// Held safe set: the accepted observation and the translation of the robot
/// since it was accepted.
struct Certificate {
  Observation o_safe = Observation::Constant(kRangeMax);
  Eigen::Vector2d xi = Eigen::Vector2d::Zero();
  int age = 0;
  bool dead_reckoning = false;
  /// False until the first observation has been accepted.
  bool valid = false;
};

/// Corners of the axis-aligned square around x, in the order NE, NW, SW, SE.
/// Velocities are copied from x.
std::array<State, 4> corner_states(const State& x, double half_width);

/// Corner states in the certificate frame for a robot with velocity v.
std::array<State, 4> certificate_corners(const Certificate& cert, const Eigen::Vector2d& v, double half_width);

/// Accepts o_new iff h(o_new, .) >= 0 at all four corners with zero
/// translation. Otherwise keeps the held certificate, increments age and
/// marks dead reckoning.
Certificate switching_update(const Certificate& cert, const Observation& o_new, const Eigen::Vector2d& v,
                             const BarrierModel& model, const FilterConfig& cfg, bool* accepted = nullptr);

/// Advances the translation by v dt.
Certificate dead_reckon(const Certificate& cert, const Eigen::Vector2d& v, double dt);

// ---------------------------------------------------------------------------
// Soft-constrained QP over the inscribed input polygon.

/// a.u + b >= -delta.
struct QpConstraint {
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  double b = 0.0;
};

struct QpProblem {
  ControlInput u_ref = ControlInput::Zero();
  std::vector<QpConstraint> constraints;
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  double lambda_s = 1e3;
  double lambda_g = 0.0;
  double u_max = kDefaultInputLimit;
  int polygon_sides = 16;
};

struct QpSolution {
  ControlInput u = ControlInput::Zero();
  double delta = 0.0;
  double objective = 0.0;
  bool ok = false;
};

/// Vertices of the inscribed polygon (first vertex on the +x axis).
std::vector<Eigen::Vector2d> input_polygon(double u_max, int sides);
bool in_input_polygon(const Eigen::Vector2d& u, double u_max, int sides, double tol = 1e-12);

/// Smallest feasible slack for a given u, max(0, max_j -(a_j.u + b_j)).
double min_slack(const QpProblem& qp, const ControlInput& u);
/// |u - u_ref|^2 + lambda_s delta - lambda_g g.u with delta = min_slack(u).
double qp_objective(const QpProblem& qp, const ControlInput& u);

/// Exact minimizer: the objective is a convex piecewise quadratic in u, so
/// each piece is minimized over its polygonal region by enumerating
/// interior, edge and vertex candidates.
QpSolution solve_qp(const QpProblem& qp);

/// Filter constraints for the held certificate at the four corners. The
/// guidance vector g is the summed position gradient of the candidate
/// observation's barrier at the corners (zero without a candidate). Corner h
/// values are written to h_out when given.
QpProblem build_qp(const Certificate& cert, const Eigen::Vector2d& v, const ControlInput& u_ref,
                   const BarrierModel& model, const FilterConfig& cfg, const Observation* candidate,
                   std::array<double, 4>* h_out = nullptr);

struct FilterOutput {
  ControlInput u_ref = ControlInput::Zero();
  ControlInput u_star = ControlInput::Zero();
  double delta = 0.0;
  std::array<bool, 4> active{};
  std::array<double, 4> h{};  // held certificate at the corners
  bool intervened = false;
  bool accepted = false;
  bool fallback = false;
  bool sustained_dead_reckoning = false;
  int age = 0;

  double min_h() const { return std::min(std::min(h[0], h[1]), std::min(h[2], h[3])); }
  nlohmann::json to_json() const;
};

/// Stateful filter: dead reckoning, switching update, QP.
class SafetyFilter {
 public:
  SafetyFilter(std::shared_ptr<const BarrierModel> model, FilterConfig cfg);

  /// One filter cycle. Only the velocity of x is used; position is tracked by
  /// dead reckoning in the certificate frame. dt is the time since the last
  /// call (ignored on the first call).
  FilterOutput step(const std::optional<Observation>& o_new, const State& x, const ControlInput& u_ref, double dt);

  const Certificate& certificate() const { return cert_; }
  const FilterConfig& config() const { return cfg_; }
  const BarrierModel& model() const { return *model_; }
  /// Forgets the certificate (e.g. after a teleport).
  void reset();

 private:
  std::shared_ptr<const BarrierModel> model_;
  FilterConfig cfg_;
  Certificate cert_;
  std::optional<Observation> candidate_;
  Eigen::Vector2d v_prev_ = Eigen::Vector2d::Zero();
  bool started_ = false;
};

}  // namespace obscbf
