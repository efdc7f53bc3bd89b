#include "obscbf/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace obscbf {

Eigen::Matrix4d system_a() {
  Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
  a(0, 2) = 1.0;
  a(1, 3) = 1.0;
  return a;
}

Eigen::Matrix<double, 4, 2> system_b() {
  Eigen::Matrix<double, 4, 2> b = Eigen::Matrix<double, 4, 2>::Zero();
  b(2, 0) = 1.0;
  b(3, 1) = 1.0;
  return b;
}

State step(const State& s, const ControlInput& u, double dt) {
  if (!s.finite() || !u.allFinite() || !std::isfinite(dt)) {
    throw std::invalid_argument("step: non-finite argument");
  }
  if (dt <= 0.0) throw std::invalid_argument("step: dt must be positive");
  State out;
  out.p = s.p + s.v * dt + 0.5 * u * dt * dt;
  out.v = s.v + u * dt;
  return out;
}

ControlInput clamp_input(const ControlInput& u, double u_max) {
  const double n = u.norm();
  if (n <= u_max) return u;
  ControlInput c = u * (u_max / n);
  // Rounding can leave the result one ulp outside the disk.
  while (c.norm() > u_max) c *= std::nextafter(1.0, 0.0);
  return c;
}

void DelayLine::push(double t, const ControlInput& u) {
  if (!queue_.empty() && t < queue_.back().t) {
    throw std::invalid_argument("DelayLine::push: timestamps must be nondecreasing");
  }
  queue_.push_back({t, u});
}

ControlInput DelayLine::delayed(double t) {
  // Small slack so that inputs pushed exactly horizon ago count as old enough
  // despite floating point accumulation in callers' clocks.
  const double cutoff = t - horizon_ + 1e-9;
  while (queue_.size() >= 2 && queue_[1].t <= cutoff) queue_.pop_front();
  if (queue_.empty() || queue_.front().t > cutoff) return ControlInput::Zero();
  return queue_.front().u;
}

}  // namespace obscbf
