#pragma once

#include <deque>

#include <Eigen/Dense>

namespace obscbf {

/// Planar double-integrator state: position [m] and velocity [m/s] in a
/// world-axis-aligned frame.
struct State {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  Eigen::Vector2d v = Eigen::Vector2d::Zero();

  State() = default;
  State(double px, double py, double vx, double vy) : p(px, py), v(vx, vy) {}
  State(const Eigen::Vector2d& pos, const Eigen::Vector2d& vel) : p(pos), v(vel) {}

  /// Stacked [x, y, vx, vy].
  Eigen::Vector4d vec() const { return {p.x(), p.y(), v.x(), v.y()}; }
  static State from_vec(const Eigen::Vector4d& x) { return State(x(0), x(1), x(2), x(3)); }

  bool finite() const { return p.allFinite() && v.allFinite(); }
};

/// Acceleration command [m/s^2].
using ControlInput = Eigen::Vector2d;

inline constexpr double kDefaultInputLimit = 2.0;

/// Continuous-time system matrices of the double integrator, x' = A x + B u.
Eigen::Matrix4d system_a();
Eigen::Matrix<double, 4, 2> system_b();

/// Exact zero-order-hold step. Throws std::invalid_argument on non-finite
/// arguments or dt <= 0.
State step(const State& s, const ControlInput& u, double dt);

/// Radial projection onto the disk ||u|| <= u_max.
ControlInput clamp_input(const ControlInput& u, double u_max);

/// Pure transport delay on the applied input. An input pushed at time t
/// becomes visible at t + horizon.
class DelayLine {
 public:
  explicit DelayLine(double horizon) : horizon_(horizon) {}

  double horizon() const { return horizon_; }

  /// Timestamps must be nondecreasing.
  void push(double t, const ControlInput& u);

  /// Input with the largest timestamp <= t - horizon, zero if none. Entries
  /// older than the returned one are discarded.
  ControlInput delayed(double t);

  void clear() { queue_.clear(); }
  std::size_t size() const { return queue_.size(); }

 private:
  struct Entry {
    double t;
    ControlInput u;
  };
  double horizon_;
  std::deque<Entry> queue_;
};

}  // namespace obscbf
