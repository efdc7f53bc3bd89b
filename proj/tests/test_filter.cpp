#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "obscbf/filter.hpp"
#include "qp_oracle.hpp"

using namespace obscbf;

namespace {

std::shared_ptr<const BarrierModel> quadratic(double c) {
  return std::make_shared<QuadraticBarrier>(c * Eigen::Matrix4d::Identity());
}

Observation empty_obs() { return Observation::Constant(kRangeMax); }

}  // namespace

TEST(CornerStates, Example) {
  const auto c = corner_states(State(0, 0, 1, 0), 0.26);
  const Eigen::Vector2d expected[4] = {{0.26, 0.26}, {-0.26, 0.26}, {-0.26, -0.26}, {0.26, -0.26}};
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(c[j].p, expected[j]);
    EXPECT_EQ(c[j].v, Eigen::Vector2d(1, 0));
  }
}

TEST(CornerStates, ZeroWidthCopies) {
  const State x(1, 2, 3, 4);
  for (const auto& s : corner_states(x, 0.0)) EXPECT_EQ(s.vec(), x.vec());
}

TEST(SwitchingUpdate, EmptyWorldAtRestAccepted) {
  const QuadraticBarrier model(Eigen::Matrix4d::Identity() / 16.0);
  Certificate cert;
  bool accepted = false;
  const Certificate out = switching_update(cert, empty_obs(), {0, 0}, model, FilterConfig{}, &accepted);
  EXPECT_TRUE(accepted);
  EXPECT_TRUE(out.valid);
  EXPECT_EQ(out.age, 0);
  EXPECT_FALSE(out.dead_reckoning);
  EXPECT_EQ(out.xi, Eigen::Vector2d::Zero());
  for (const auto& e : model.evaluate(out.o_safe, certificate_corners(out, {0, 0}, 0.26))) EXPECT_GE(e.h, 0.0);
}

TEST(SwitchingUpdate, ObstacleOverlappingCornerRejected) {
  const RangeBarrier model;
  FilterConfig cfg;
  Certificate cert = switching_update(Certificate{}, empty_obs(), {0, 0}, model, cfg);
  cert.xi = {0.4, -0.1};
  // A return at 0.3 m in the NE bin: the corner (0.26, 0.26) lies beyond it.
  Observation o = empty_obs();
  o(bin_of(M_PI / 4)) = 0.3;
  ASSERT_TRUE(is_obstacle(o, State(0.26, 0.26, 0, 0)));
  bool accepted = true;
  const Certificate out = switching_update(cert, o, {0, 0}, model, cfg, &accepted);
  EXPECT_FALSE(accepted);
  EXPECT_EQ(out.age, 1);
  EXPECT_TRUE(out.dead_reckoning);
  EXPECT_EQ(out.xi, cert.xi);
  EXPECT_EQ(out.o_safe, cert.o_safe);
  const Certificate again = switching_update(out, o, {0, 0}, model, cfg);
  EXPECT_EQ(again.age, 2);
}

TEST(DeadReckon, Examples) {
  Certificate c;
  c.xi = {1, 1};
  EXPECT_TRUE(dead_reckon(c, {1, 0}, 0.05).xi.isApprox(Eigen::Vector2d(1.05, 1)));
  EXPECT_EQ(dead_reckon(c, {0, 0}, 0.05).xi, c.xi);
  const Eigen::Vector2d v(0.3, -0.7);
  EXPECT_LT((dead_reckon(dead_reckon(c, v, 0.05), v, 0.05).xi - dead_reckon(c, v, 0.1).xi).norm(), 1e-15);
}

TEST(InputPolygon, InscribedInDisk) {
  const auto v = input_polygon(2.0, 16);
  ASSERT_EQ(v.size(), 16u);
  EXPECT_EQ(v[0], Eigen::Vector2d(2, 0));
  for (const auto& p : v) {
    EXPECT_NEAR(p.norm(), 2.0, 1e-12);
    EXPECT_TRUE(in_input_polygon(p, 2.0, 16, 1e-12));
  }
  EXPECT_FALSE(in_input_polygon(Eigen::Vector2d(2.0, 0.0).norm() * Eigen::Vector2d(std::cos(M_PI / 16), std::sin(M_PI / 16)), 2.0, 16));
  EXPECT_TRUE(in_input_polygon(Eigen::Vector2d(1.96, 0.0), 2.0, 16));
}

TEST(SolveQp, SatisfiedConstraintsReturnReference) {
  QpProblem qp;
  qp.u_ref = {0.5, -0.3};
  qp.constraints = {{{1, 0}, 2.0}, {{0, 1}, 1.0}, {{-1, -1}, 3.0}, {{0, 0}, 0.1}};
  const QpSolution s = solve_qp(qp);
  ASSERT_TRUE(s.ok);
  EXPECT_LT((s.u - qp.u_ref).norm(), 1e-12);
  EXPECT_EQ(s.delta, 0.0);
}

TEST(SolveQp, SingleConstraintIsHalfplaneProjection) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  int tested = 0;
  while (tested < 200) {
    QpProblem qp;
    qp.u_ref = {n(rng), n(rng)};
    const Eigen::Vector2d a(n(rng), n(rng));
    const double b = n(rng);
    qp.constraints = {{a, b}};
    // Projection onto {a.u + b >= 0}.
    const double viol = a.dot(qp.u_ref) + b;
    const Eigen::Vector2d proj = viol >= 0 ? qp.u_ref : Eigen::Vector2d(qp.u_ref - viol * a / a.squaredNorm());
    if (!in_input_polygon(proj, qp.u_max, qp.polygon_sides) || a.norm() < 0.1) continue;
    const QpSolution s = solve_qp(qp);
    ASSERT_TRUE(s.ok);
    EXPECT_LT((s.u - proj).norm(), 1e-9);
    EXPECT_LT(s.delta, 1e-12);
    ++tested;
  }
}

TEST(SolveQp, MatchesGridOracle) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const QpProblem qp = oracle::random_instance(rng, i % 2 ? 0.1 : 0.0);
    const QpSolution s = solve_qp(qp);
    ASSERT_TRUE(s.ok);
    const auto g = oracle::grid_search(qp);
    EXPECT_LE(s.objective, g.objective + 1e-9);
    EXPECT_NEAR(s.objective, g.objective, 1e-3) << i;
    EXPECT_NEAR(s.delta, oracle::slack(qp, s.u), 1e-12);
    EXPECT_LE(s.u.norm(), 2.0);
  }
}

TEST(SolveQpProperty, SlackOnlyWhenInfeasible) {
  std::mt19937_64 rng(3);
  int with_slack = 0, without = 0;
  for (int i = 0; i < 2000; ++i) {
    QpProblem qp = oracle::random_instance(rng, 0.0);
    for (auto& c : qp.constraints) {
      if (c.a.norm() < 0.3) c.a = c.a.normalized() * 0.3;  // keep multipliers below lambda_s
    }
    const QpSolution s = solve_qp(qp);
    ASSERT_TRUE(s.ok);
    EXPECT_LE(s.u.norm(), qp.u_max);
    EXPECT_GE(s.delta, 0.0);
    const bool feasible = oracle::hard_feasible(qp);
    if (s.delta > 1e-9) {
      EXPECT_FALSE(feasible) << i;
      ++with_slack;
    } else {
      ++without;
    }
    if (!feasible) EXPECT_GT(s.delta, 0.0);
  }
  EXPECT_GT(with_slack, 0);
  EXPECT_GT(without, 0);
}

TEST(SolveQpProperty, NoInterventionWhenReferenceSafe) {
  std::mt19937_64 rng(4);
  int tested = 0;
  for (int i = 0; i < 2000 && tested < 300; ++i) {
    const QpProblem qp = oracle::random_instance(rng, 0.0);
    if (!in_input_polygon(qp.u_ref, qp.u_max, qp.polygon_sides) || oracle::slack(qp, qp.u_ref) > 0) continue;
    EXPECT_LT((solve_qp(qp).u - qp.u_ref).norm(), 1e-6);
    ++tested;
  }
  EXPECT_GT(tested, 50);
}

TEST(SafetyFilter, EquilibriumAtRest) {
  SafetyFilter f(quadratic(1.0 / 16.0), FilterConfig{});
  for (int k = 0; k < 100; ++k) {
    const FilterOutput out = f.step(empty_obs(), State(), {0, 0}, 0.05);
    EXPECT_EQ(out.u_star, ControlInput(0, 0));
    EXPECT_FALSE(out.intervened);
    EXPECT_TRUE(out.accepted);
    EXPECT_EQ(out.delta, 0.0);
  }
}

TEST(SafetyFilter, SafeReferenceUntouched) {
  SafetyFilter f(std::make_shared<TrivialBarrier>(), FilterConfig{});
  const FilterOutput out = f.step(empty_obs(), State(0, 0, 1, 0), {2, 0}, 0.05);
  EXPECT_EQ(out.u_star, ControlInput(2, 0));
  EXPECT_FALSE(out.intervened);
}

TEST(SafetyFilter, NoCertificateBrakes) {
  SafetyFilter f(std::make_shared<RangeBarrier>(), FilterConfig{});
  Observation blocked = empty_obs();
  blocked.setConstant(0.2);
  const FilterOutput out = f.step(blocked, State(0, 0, 1, 0), {2, 0}, 0.05);
  EXPECT_FALSE(out.accepted);
  EXPECT_TRUE(out.fallback);
  EXPECT_TRUE(out.u_star.isApprox(ControlInput(-2, 0)));
}

TEST(SafetyFilter, SensorDropoutKeepsCertificateAndFlags) {
  FilterConfig cfg;
  SafetyFilter f(std::make_shared<RangeBarrier>(), cfg);
  State x(0, 0, 0, 0);
  f.step(empty_obs(), x, {0, 0}, 0.05);
  ASSERT_TRUE(f.certificate().valid);
  const Observation held = f.certificate().o_safe;
  // A frozen, unusable observation stream: every update is rejected.
  Observation bad = empty_obs();
  bad.setConstant(0.2);
  for (int k = 1; k <= 6; ++k) {
    const FilterOutput out = f.step(bad, x, {2, 0}, 0.05);
    EXPECT_FALSE(out.accepted);
    EXPECT_EQ(out.age, k);
    EXPECT_EQ(out.sustained_dead_reckoning, k > cfg.eta);
    EXPECT_EQ(f.certificate().o_safe, held);
    EXPECT_FALSE(out.fallback);
    EXPECT_LE(out.u_star.norm(), cfg.u_max);
    x = step(x, out.u_star, 0.05);
  }
  EXPECT_GT(f.certificate().xi.norm(), 0.0);
}

TEST(SafetyFilter, DeadReckoningUsesTrapezoid) {
  SafetyFilter f(quadratic(1.0 / 100.0), FilterConfig{});
  f.step(empty_obs(), State(0, 0, 0, 0), {0, 0}, 0.05);
  f.step(std::nullopt, State(0, 0, 1, 0), {0, 0}, 0.05);
  EXPECT_TRUE(f.certificate().xi.isApprox(Eigen::Vector2d(0.025, 0)));
  f.step(std::nullopt, State(0, 0, 1, 0), {0, 0}, 0.05);
  EXPECT_TRUE(f.certificate().xi.isApprox(Eigen::Vector2d(0.075, 0)));
}

TEST(SafetyFilter, GuidanceTermOnlyWhileDeadReckoning) {
  FilterConfig cfg;
  cfg.lambda_g = 1.0;
  const RangeBarrier model;
  Certificate cert = switching_update(Certificate{}, empty_obs(), {0, 0}, model, cfg);
  Observation cand = empty_obs();
  cand(0) = 1.0;
  const QpProblem without = build_qp(cert, {0.5, 0}, {0, 0}, model, cfg, nullptr);
  EXPECT_EQ(without.g, Eigen::Vector2d::Zero());
  const QpProblem with = build_qp(cert, {0.5, 0}, {0, 0}, model, cfg, &cand);
  // Corner position gradients are symmetric, so the sum cancels for this
  // barrier; the guidance vector is finite and has the candidate's scale.
  EXPECT_TRUE(with.g.allFinite());
  EXPECT_EQ(with.constraints.size(), 4u);
}

TEST(FilterConfigJson, Validation) {
  FilterConfig c;
  c.eta = 5;
  EXPECT_EQ(FilterConfig::from_json(c.to_json()).to_json(), c.to_json());
  nlohmann::json bad = c.to_json();
  bad["lambda_s"] = 0.0;
  EXPECT_THROW(FilterConfig::from_json(bad), std::invalid_argument);
  bad = c.to_json();
  bad["eta"] = 0;
  EXPECT_THROW(FilterConfig::from_json(bad), std::invalid_argument);
}
