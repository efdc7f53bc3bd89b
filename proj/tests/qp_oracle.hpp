#pragma once

// Brute-force reference for the filter QP: a grid over the input polygon
// with the slack eliminated analytically and line searches along the
// remaining directions.

#include <cmath>
#include <limits>
#include <random>
#include <utility>

#include "obscbf/filter.hpp"

namespace oracle {

struct GridResult {
  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  double objective = std::numeric_limits<double>::infinity();
};

inline double slack(const obscbf::QpProblem& qp, const Eigen::Vector2d& u) {
  double d = 0.0;
  for (const auto& c : qp.constraints) d = std::max(d, -(c.a.dot(u) + c.b));
  return d;
}

inline double objective(const obscbf::QpProblem& qp, const Eigen::Vector2d& u) {
  return (u - qp.u_ref).squaredNorm() + qp.lambda_s * slack(qp, u) - qp.lambda_g * qp.g.dot(u);
}

inline bool in_polygon(const obscbf::QpProblem& qp, const Eigen::Vector2d& u) {
  const int n = qp.polygon_sides;
  const double r_in = qp.u_max * std::cos(M_PI / n);
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * (k + 0.5) / n;
    if (std::cos(a) * u.x() + std::sin(a) * u.y() > r_in + 1e-12) return false;
  }
  return true;
}

// Interval of y inside the polygon at abscissa x (empty when lo > hi).
inline std::pair<double, double> y_range(const obscbf::QpProblem& qp, double x) {
  const int n = qp.polygon_sides;
  const double r_in = qp.u_max * std::cos(M_PI / n);
  double lo = -qp.u_max, hi = qp.u_max;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * (k + 0.5) / n;
    const double nx = std::cos(a), ny = std::sin(a);
    if (std::abs(ny) < 1e-15) {
      if (nx * x > r_in) return {1.0, -1.0};
      continue;
    }
    const double bound = (r_in - nx * x) / ny;
    if (ny > 0) hi = std::min(hi, bound);
    else lo = std::max(lo, bound);
  }
  return {lo, hi};
}

template <typename F>
double golden_min(F f, double lo, double hi, double* arg, int iters = 120) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  double best = fc, x = c;
  for (double t : {a, b, d}) {
    const double ft = f(t);
    if (ft < best) {
      best = ft;
      x = t;
    }
  }
  if (arg) *arg = x;
  return best;
}

// Exact minimum over y at fixed x: the objective is convex along the segment.
inline double column_min(const obscbf::QpProblem& qp, double x, double* y_arg) {
  const auto [lo, hi] = y_range(qp, x);
  if (lo > hi) return std::numeric_limits<double>::infinity();
  return golden_min([&](double y) { return objective(qp, Eigen::Vector2d(x, y)); }, lo, hi, y_arg);
}

/// Grid over u_x with step 0.005 across the polygon; the remaining
/// coordinate (and the slack) are eliminated by exact one-dimensional
/// minimization. The partial minimum is convex in u_x, so the true
/// minimizer lies within one step of the best grid column, where a final
/// line search refines it.
inline GridResult grid_search(const obscbf::QpProblem& qp, double step = 0.005) {
  GridResult best;
  double x_best = 0.0;
  const int n = static_cast<int>(std::ceil(2.0 * qp.u_max / step));
  for (int i = 0; i <= n; ++i) {
    const double x = -qp.u_max + i * step;
    double y;
    const double f = column_min(qp, x, &y);
    if (f < best.objective) {
      best.objective = f;
      best.u = {x, y};
      x_best = x;
    }
  }
  double x;
  const double f = golden_min(
      [&](double t) { return column_min(qp, t, nullptr); }, std::max(-qp.u_max, x_best - step),
      std::min(qp.u_max, x_best + step), &x);
  if (f < best.objective) {
    double y;
    best.objective = column_min(qp, x, &y);
    best.u = {x, y};
  }
  return best;
}

/// Feasibility of the hard-constrained problem: a nonempty intersection of
/// half-planes contains a vertex formed by two boundary lines (or the
/// polygon vertices when no constraint is present).
inline bool hard_feasible(const obscbf::QpProblem& qp, double tol = 1e-9) {
  struct Line {
    Eigen::Vector2d n;
    double c;
  };
  std::vector<Line> lines;
  const int n = qp.polygon_sides;
  const double r_in = qp.u_max * std::cos(M_PI / n);
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * (k + 0.5) / n;
    lines.push_back({{std::cos(a), std::sin(a)}, r_in});
  }
  for (const auto& c : qp.constraints) {
    if (c.a.norm() < 1e-14) {
      if (c.b < -tol) return false;
      continue;
    }
    lines.push_back({-c.a / c.a.norm(), c.b / c.a.norm()});  // a.u + b >= 0
  }
  auto ok = [&](const Eigen::Vector2d& u) {
    for (const auto& l : lines) {
      if (l.n.dot(u) > l.c + tol) return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      Eigen::Matrix2d m;
      m << lines[i].n.transpose(), lines[j].n.transpose();
      if (std::abs(m.determinant()) < 1e-14) continue;
      if (ok(m.inverse() * Eigen::Vector2d(lines[i].c, lines[j].c))) return true;
    }
  }
  return false;
}

/// Random filter-like QP instance.
template <typename Rng>
obscbf::QpProblem random_instance(Rng& rng, double lambda_g) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> b(-3.0, 3.0);
  obscbf::QpProblem qp;
  qp.u_ref = Eigen::Vector2d(n(rng), n(rng)) * 1.5;
  for (int j = 0; j < 4; ++j) qp.constraints.push_back({Eigen::Vector2d(n(rng), n(rng)), b(rng)});
  qp.g = Eigen::Vector2d(n(rng), n(rng));
  qp.lambda_g = lambda_g;
  qp.lambda_s = 1e3;
  return qp;
}

}  // namespace oracle
