#include "obscbf/filter.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace obscbf {

std::vector<BarrierEval> NeuralBarrier::evaluate(const Observation& o, std::span<const State> xs) const {
  std::vector<BarrierEval> out;
  out.reserve(xs.size());
  for (const auto& e : net_.forward(o, xs)) out.push_back({e.h, e.grad_h});
  return out;
}

std::vector<BarrierEval> QuadraticBarrier::evaluate(const Observation&, std::span<const State> xs) const {
  std::vector<BarrierEval> out;
  out.reserve(xs.size());
  for (const auto& s : xs) {
    const Eigen::Vector4d x = s.vec();
    out.push_back({1.0 - x.dot(p_ * x), -2.0 * p_ * x});
  }
  return out;
}

std::vector<BarrierEval> RangeBarrier::evaluate(const Observation& o, std::span<const State> xs) const {
  const double d = std::min(o.minCoeff(), kRangeMax);
  const double kp = 1.0 / (d * d), kv = 1.0 / (v_scale_ * v_scale_);
  std::vector<BarrierEval> out;
  out.reserve(xs.size());
  for (const auto& s : xs) {
    BarrierEval e;
    const Eigen::Vector2d q = s.p + lead_ * s.v;
    e.h = 1.0 - kp * q.squaredNorm() - kv * s.v.squaredNorm();
    e.grad << -2.0 * kp * q, -2.0 * kp * lead_ * q - 2.0 * kv * s.v;
    out.push_back(e);
  }
  return out;
}

std::vector<BarrierEval> TrivialBarrier::evaluate(const Observation&, std::span<const State> xs) const {
  return std::vector<BarrierEval>(xs.size(), BarrierEval{1.0, Eigen::Vector4d::Zero()});
}

nlohmann::json FilterConfig::to_json() const {
  return {{"u_max", u_max},       {"polygon_sides", polygon_sides}, {"lambda_s", lambda_s},
          {"lambda_g", lambda_g}, {"eta", eta},                     {"half_width", half_width},
          {"k_v", k_v}};
}

FilterConfig FilterConfig::from_json(const nlohmann::json& j) {
  FilterConfig c;
  c.u_max = j.value("u_max", c.u_max);
  c.polygon_sides = j.value("polygon_sides", c.polygon_sides);
  c.lambda_s = j.value("lambda_s", c.lambda_s);
  c.lambda_g = j.value("lambda_g", c.lambda_g);
  c.eta = j.value("eta", c.eta);
  c.half_width = j.value("half_width", c.half_width);
  c.k_v = j.value("k_v", c.k_v);
  if (!(c.lambda_s > 0.0) || c.eta < 1 || c.polygon_sides < 3 || !(c.u_max > 0.0) || c.half_width < 0.0 ||
      c.lambda_g < 0.0) {
    throw std::invalid_argument("FilterConfig: invalid parameters");
  }
  return c;
}

std::array<State, 4> corner_states(const State& x, double half_width) {
  const double w = half_width;
  return {State(x.p + Eigen::Vector2d(w, w), x.v), State(x.p + Eigen::Vector2d(-w, w), x.v),
          State(x.p + Eigen::Vector2d(-w, -w), x.v), State(x.p + Eigen::Vector2d(w, -w), x.v)};
}

std::array<State, 4> certificate_corners(const Certificate& cert, const Eigen::Vector2d& v, double half_width) {
  return corner_states(State(cert.xi, v), half_width);
}

Certificate switching_update(const Certificate& cert, const Observation& o_new, const Eigen::Vector2d& v,
                             const BarrierModel& model, const FilterConfig& cfg, bool* accepted) {
  const auto corners = corner_states(State(Eigen::Vector2d::Zero(), v), cfg.half_width);
  double h_min = std::numeric_limits<double>::infinity();
  for (const auto& e : model.evaluate(o_new, corners)) h_min = std::min(h_min, e.h);
  Certificate out = cert;
  const bool ok = h_min >= 0.0;
  if (ok) {
    out.o_safe = o_new;
    out.xi.setZero();
    out.age = 0;
    out.dead_reckoning = false;
    out.valid = true;
  } else {
    ++out.age;
    out.dead_reckoning = true;
  }
  if (accepted) *accepted = ok;
  return out;
}

Certificate dead_reckon(const Certificate& cert, const Eigen::Vector2d& v, double dt) {
  Certificate out = cert;
  out.xi += v * dt;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Eigen::Vector2d> input_polygon(double u_max, int sides) {
  std::vector<Eigen::Vector2d> v;
  for (int k = 0; k < sides; ++k) {
    const double a = 2.0 * std::numbers::pi * k / sides;
    v.emplace_back(u_max * std::cos(a), u_max * std::sin(a));
  }
  return v;
}

namespace {

struct HalfPlane {
  Eigen::Vector2d n;  // unit normal
  double c;           // n.u <= c
};

std::vector<HalfPlane> polygon_halfplanes(double u_max, int sides) {
  std::vector<HalfPlane> hs;
  const double r_in = u_max * std::cos(std::numbers::pi / sides);
  for (int k = 0; k < sides; ++k) {
    const double a = 2.0 * std::numbers::pi * (k + 0.5) / sides;
    hs.push_back({{std::cos(a), std::sin(a)}, r_in});
  }
  return hs;
}

bool inside(const std::vector<HalfPlane>& hs, const Eigen::Vector2d& u, double tol) {
  for (const auto& h : hs) {
    if (h.n.dot(u) > h.c + tol) return false;
  }
  return true;
}

}  // namespace

bool in_input_polygon(const Eigen::Vector2d& u, double u_max, int sides, double tol) {
  return inside(polygon_halfplanes(u_max, sides), u, tol);
}

double min_slack(const QpProblem& qp, const ControlInput& u) {
  double d = 0.0;
  for (const auto& c : qp.constraints) d = std::max(d, -(c.a.dot(u) + c.b));
  return d;
}

double qp_objective(const QpProblem& qp, const ControlInput& u) {
  return (u - qp.u_ref).squaredNorm() + qp.lambda_s * min_slack(qp, u) - qp.lambda_g * qp.g.dot(u);
}

QpSolution solve_qp(const QpProblem& qp) {
  constexpr double kTol = 1e-9;
  const auto poly = polygon_halfplanes(qp.u_max, qp.polygon_sides);
  // Pieces of the slack: l_0 = 0, l_j(u) = s_j.u + o_j with s_j = -a_j, o_j = -b_j.
  const std::size_t n_pieces = qp.constraints.size() + 1;
  auto slope = [&](std::size_t m) -> Eigen::Vector2d {
    return m == 0 ? Eigen::Vector2d::Zero() : Eigen::Vector2d(-qp.constraints[m - 1].a);
  };
  auto offset = [&](std::size_t m) { return m == 0 ? 0.0 : -qp.constraints[m - 1].b; };

  QpSolution best;
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<HalfPlane> hs;
  std::vector<Eigen::Vector2d> cands;
  for (std::size_t m = 0; m < n_pieces; ++m) {
    // Region where piece m is the maximum: (s_k - s_m).u <= o_m - o_k.
    hs = poly;
    bool empty = false;
    for (std::size_t k = 0; k < n_pieces && !empty; ++k) {
      if (k == m) continue;
      const Eigen::Vector2d n = slope(k) - slope(m);
      const double c = offset(m) - offset(k);
      const double len = n.norm();
      if (len < 1e-12) {
        if (c < -kTol) empty = true;
        continue;
      }
      hs.push_back({n / len, c / len});
    }
    if (empty) continue;

    const Eigen::Vector2d center = qp.u_ref + 0.5 * (qp.lambda_g * qp.g - qp.lambda_s * slope(m));
    cands.clear();
    cands.push_back(center);
    for (const auto& h : hs) cands.push_back(center - (h.n.dot(center) - h.c) * h.n);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      for (std::size_t j = i + 1; j < hs.size(); ++j) {
        Eigen::Matrix2d m2;
        m2 << hs[i].n.transpose(), hs[j].n.transpose();
        const double det = m2.determinant();
        if (std::abs(det) < 1e-12) continue;
        cands.push_back(m2.inverse() * Eigen::Vector2d(hs[i].c, hs[j].c));
      }
    }
    for (const auto& u : cands) {
      if (!u.allFinite() || !inside(hs, u, kTol)) continue;
      const double f = qp_objective(qp, u);
      if (f < best.objective) {
        best.objective = f;
        best.u = u;
        best.ok = true;
      }
    }
  }
  if (best.ok) {
    best.u = clamp_input(best.u, qp.u_max);
    best.delta = min_slack(qp, best.u);
    best.objective = qp_objective(qp, best.u);
  }
  return best;
}

QpProblem build_qp(const Certificate& cert, const Eigen::Vector2d& v, const ControlInput& u_ref,
                   const BarrierModel& model, const FilterConfig& cfg, const Observation* candidate,
                   std::array<double, 4>* h_out) {
  QpProblem qp;
  qp.u_ref = u_ref;
  qp.lambda_s = cfg.lambda_s;
  qp.lambda_g = cfg.lambda_g;
  qp.u_max = cfg.u_max;
  qp.polygon_sides = cfg.polygon_sides;
  const auto corners = certificate_corners(cert, v, cfg.half_width);
  const auto evals = model.evaluate(cert.o_safe, corners);
  for (std::size_t j = 0; j < corners.size(); ++j) {
    const auto& e = evals[j];
    // grad.(A x + B u) + alpha(h) = grad_p.v + grad_v.u + alpha(h)
    qp.constraints.push_back({e.grad.tail<2>(), e.grad.head<2>().dot(v) + alpha(e.h)});
    if (h_out) (*h_out)[j] = e.h;
  }
  if (candidate) {
    const auto at_origin = corner_states(State(Eigen::Vector2d::Zero(), v), cfg.half_width);
    for (const auto& e : model.evaluate(*candidate, at_origin)) qp.g += e.grad.head<2>();
  }
  return qp;
}

nlohmann::json FilterOutput::to_json() const {
  return {{"u_ref", {u_ref.x(), u_ref.y()}},
          {"u_star", {u_star.x(), u_star.y()}},
          {"delta", delta},
          {"active", active},
          {"h", h},
          {"intervened", intervened},
          {"accepted", accepted},
          {"fallback", fallback},
          {"sustained_dead_reckoning", sustained_dead_reckoning},
          {"age", age}};
}

SafetyFilter::SafetyFilter(std::shared_ptr<const BarrierModel> model, FilterConfig cfg)
    : model_(std::move(model)), cfg_(cfg) {
  if (!model_) throw std::invalid_argument("SafetyFilter: null model");
}

void SafetyFilter::reset() {
  cert_ = Certificate{};
  candidate_.reset();
  v_prev_.setZero();
  started_ = false;
}

FilterOutput SafetyFilter::step(const std::optional<Observation>& o_new, const State& x, const ControlInput& u_ref,
                                double dt) {
  const Eigen::Vector2d v = x.v;
  if (started_ && cert_.valid) cert_ = dead_reckon(cert_, 0.5 * (v_prev_ + v), dt);
  started_ = true;
  v_prev_ = v;

  FilterOutput out;
  out.u_ref = u_ref;
  if (o_new) {
    cert_ = switching_update(cert_, *o_new, v, *model_, cfg_, &out.accepted);
    if (out.accepted) {
      candidate_.reset();
    } else {
      candidate_ = *o_new;
    }
  }
  out.age = cert_.age;
  out.sustained_dead_reckoning = cert_.age > cfg_.eta;

  auto brake = [&] {
    out.fallback = true;
    out.u_star = clamp_input(-cfg_.k_v * v, cfg_.u_max);
    out.intervened = (out.u_star - u_ref).norm() > 1e-6;
    return out;
  };
  if (!cert_.valid) {
    out.h.fill(-std::numeric_limits<double>::infinity());
    return brake();
  }

  const Observation* cand = cert_.dead_reckoning && candidate_ ? &*candidate_ : nullptr;
  const QpProblem qp = build_qp(cert_, v, u_ref, *model_, cfg_, cand, &out.h);
  const QpSolution sol = solve_qp(qp);
  if (!sol.ok || !sol.u.allFinite()) return brake();
  out.u_star = sol.u;
  out.delta = sol.delta;
  for (std::size_t j = 0; j < qp.constraints.size(); ++j) {
    const auto& c = qp.constraints[j];
    out.active[j] = c.a.dot(sol.u) + c.b + sol.delta <= 1e-7 * (1.0 + std::abs(c.b));
  }
  out.intervened = (out.u_star - u_ref).norm() > 1e-6;
  return out;
}

}  // namespace obscbf
