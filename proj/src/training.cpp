#include "obscbf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace obscbf {
namespace {

using MatX4 = Eigen::Matrix<double, Eigen::Dynamic, 4>;
using MatX2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

double relu(double v) { return v > 0.0 ? v : 0.0; }

struct SampleGrad {
  MatX4 p;
  std::array<MatX4, 4> p_dx;
  MatX2 r;
};

// Loss of one sample and, if g is non-null, its adjoint with respect to the
// feature matrices P~, dP~/dx_i and R~.
LossBreakdown sample_loss(const FeatureMatrices& f, const Eigen::Vector4d& x, bool obstacle, bool boundary,
                          const LossWeights& w, const NetConfig& c, SampleGrad* g) {
  LossBreakdown out;
  out.samples = 1;
  const Eigen::Matrix4d p = f.p.transpose() * f.p;
  const double h = 1.0 - x.dot(p * x);
  Eigen::Matrix4d g_p = Eigen::Matrix4d::Zero();
  double g_h = 0.0;

  if (boundary) {
    const double a = h + w.eps_obstacle;
    out.boundary = w.boundary * relu(a);
    if (g) {
      if (a > 0.0) g_h = w.boundary;
      g_p = -g_h * x * x.transpose();
      g->p = 2.0 * f.p * g_p;
      for (auto& m : g->p_dx) m = MatX4::Zero(f.p.rows(), 4);
      g->r = MatX2::Zero(f.r.rows(), 2);
    }
    return out;
  }

  if (obstacle) {
    const double a = h + w.eps_obstacle;
    out.obstacle = w.obstacle * relu(a);
    if (a > 0.0) g_h += w.obstacle;
  } else {
    out.safe = w.safe * (1.0 - h);
    g_h -= w.safe;
  }

  std::array<Eigen::Matrix4d, 4> dp;
  for (int i = 0; i < 4; ++i) {
    dp[i] = f.p_dx[i].transpose() * f.p + f.p.transpose() * f.p_dx[i];
    out.reg += w.reg * dp[i].squaredNorm();
  }
  const Eigen::Matrix4d s = gradient_s(p, dp, x);
  const Eigen::Matrix2d r = f.r.transpose() * f.r + c.eps_r * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d r_inv = r.inverse();
  const Eigen::Vector2d u = -r_inv * (s * x).tail<2>();

  Eigen::Matrix4d g_s = Eigen::Matrix4d::Zero();
  Eigen::Matrix2d g_r = Eigen::Matrix2d::Zero();

  const double u_norm = u.norm();
  if (u_norm > c.u_max) {
    out.input = w.input * (u_norm - c.u_max);
    const Eigen::Vector2d g_u = w.input * u / u_norm;
    const Eigen::Vector2d r_inv_gu = r_inv * g_u;
    g_r -= r_inv_gu * u.transpose();
    g_s.bottomRows<2>() -= r_inv_gu * x.transpose();
  }

  const double n2 = x.squaredNorm();
  if (n2 >= c.r_min * c.r_min) {
    const Eigen::Matrix4d a = system_a();
    Eigen::Matrix4d gm = Eigen::Matrix4d::Zero();
    gm.bottomRightCorner<2, 2>() = r_inv;
    const Eigen::Matrix4d q = Eigen::Matrix4d::Identity() / n2 - p;
    const double rh = rho(h);
    const Eigen::Matrix4d l =
        a.transpose() * s + s.transpose() * a - 2.0 * s.transpose() * gm * s - rh * q;
    const Eigen::Matrix4d k = 0.5 * (l + l.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(k);
    Eigen::Matrix4d g_k = Eigen::Matrix4d::Zero();
    bool active = false;
    for (int i = 0; i < 4; ++i) {
      const double v = es.eigenvalues()(i) + w.eps_lie;
      if (v > 0.0) {
        out.lie += w.lie * v;
        g_k += w.lie * es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
        active = true;
      }
    }
    if (g && active) {
      // g_k is symmetric, so it is also the adjoint of the unsymmetrized L.
      g_s += 2.0 * a * g_k - 4.0 * gm * s * g_k;
      const Eigen::Matrix4d g_gm = -2.0 * s * g_k * s.transpose();
      g_r -= r_inv * g_gm.bottomRightCorner<2, 2>() * r_inv;
      g_h += -(g_k.cwiseProduct(q)).sum() * rho_derivative(h);
      g_p += rh * g_k;
    }
  }

  if (!g) return out;
  g_p -= g_h * x * x.transpose();
  g_p += g_s;
  g->p = f.p * (g_p + g_p.transpose());
  for (int i = 0; i < 4; ++i) {
    Eigen::Matrix4d g_dp = 0.5 * x * g_s.row(i) + 2.0 * w.reg * dp[i];
    const Eigen::Matrix4d sym = g_dp + g_dp.transpose();
    g->p_dx[i] = f.p * sym;
    g->p += f.p_dx[i] * sym;
  }
  g->r = f.r * (g_r + g_r.transpose());
  return out;
}

template <typename S>
void adam_update(nn::Mlp<S>& net, const nn::MlpGrad<S>& g, nn::MlpGrad<S>& m, nn::MlpGrad<S>& v, double scale,
                 double lr_t, const TrainConfig& cfg) {
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S sc = static_cast<S>(scale), lr = static_cast<S>(lr_t), eps = static_cast<S>(cfg.adam_eps);
  auto update = [&](auto& param, const auto& grad, auto& mm, auto& vv) {
    auto gs = (grad.array() * sc).eval();
    mm.array() = b1 * mm.array() + (S(1) - b1) * gs;
    vv.array() = b2 * vv.array() + (S(1) - b2) * gs.square();
    param.array() -= lr * mm.array() / (vv.array().sqrt() + eps);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].weight, g.weight[l], m.weight[l], v.weight[l]);
    update(net.layers[l].bias, g.bias[l], m.bias[l], v.bias[l]);
  }
}

double eval_lr(const TrainConfig& cfg, long step, long total) {
  if (total <= 1) return cfg.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total - 1);
  const double lo = cfg.learning_rate * cfg.lr_final_factor;
  return lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

nlohmann::json phase_json(const PhaseConfig& p) {
  return {{"epochs", p.epochs},
          {"observations_per_batch", p.observations_per_batch},
          {"states_per_observation", p.states_per_observation},
          {"boundary_per_observation", p.boundary_per_observation}};
}

PhaseConfig phase_from_json(const nlohmann::json& j, PhaseConfig p) {
  p.epochs = j.value("epochs", p.epochs);
  p.observations_per_batch = j.value("observations_per_batch", p.observations_per_batch);
  p.states_per_observation = j.value("states_per_observation", p.states_per_observation);
  p.boundary_per_observation = j.value("boundary_per_observation", p.boundary_per_observation);
  return p;
}

}  // namespace

nlohmann::json LossWeights::to_json() const {
  return {{"obstacle", obstacle}, {"safe", safe},
          {"input", input},       {"lie", lie},
          {"boundary", boundary}, {"eps_obstacle", eps_obstacle},
          {"eps_lie", eps_lie},   {"reg", reg}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  w.obstacle = j.value("obstacle", w.obstacle);
  w.safe = j.value("safe", w.safe);
  w.input = j.value("input", w.input);
  w.lie = j.value("lie", w.lie);
  w.boundary = j.value("boundary", w.boundary);
  w.eps_obstacle = j.value("eps_obstacle", w.eps_obstacle);
  w.eps_lie = j.value("eps_lie", w.eps_lie);
  w.reg = j.value("reg", w.reg);
  for (double v : {w.obstacle, w.safe, w.input, w.lie, w.boundary, w.eps_obstacle, w.eps_lie, w.reg}) {
    if (!(v >= 0.0)) throw std::invalid_argument("LossWeights: weights and slacks must be nonnegative");
  }
  return w;
}

TrainConfig TrainConfig::paper_schedule() {
  TrainConfig c;
  c.phase1.epochs = 100;
  c.phase2.epochs = 250;
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"format", 1},
          {"phase1", phase_json(phase1)},
          {"phase2", phase_json(phase2)},
          {"weights", weights.to_json()},
          {"learning_rate", learning_rate},
          {"lr_final_factor", lr_final_factor},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"divergence_threshold", divergence_threshold}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (j.value("format", 1) != 1) throw std::invalid_argument("TrainConfig: unsupported format");
  TrainConfig c = j.value("schedule", std::string("desk")) == "paper" ? paper_schedule() : desk();
  if (j.contains("phase1")) c.phase1 = phase_from_json(j["phase1"], c.phase1);
  if (j.contains("phase2")) c.phase2 = phase_from_json(j["phase2"], c.phase2);
  if (j.contains("weights")) c.weights = LossWeights::from_json(j["weights"]);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_final_factor = j.value("lr_final_factor", c.lr_final_factor);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
  for (const auto* p : {&c.phase1, &c.phase2}) {
    if (p->epochs < 0 || p->observations_per_batch < 1 || p->states_per_observation < 1 ||
        p->boundary_per_observation < 0) {
      throw std::invalid_argument("TrainConfig: counts must be positive");
    }
  }
  return c;
}

Batch sample_batch(const Dataset& ds, std::span<const int> obs_indices, int states, int boundary, Rng& rng) {
  Batch b;
  b.observations.reserve(obs_indices.size());
  b.samples.reserve(obs_indices.size() * static_cast<std::size_t>(states + boundary));
  const double r_max = ds.config.r_max, v_max = ds.config.v_max;
  for (std::size_t k = 0; k < obs_indices.size(); ++k) {
    const Observation o = ds.observation(obs_indices[k]);
    b.observations.push_back(o);
    const int idx = static_cast<int>(k);
    for (int s = 0; s < states; ++s) {
      const State x = sample_state(rng, r_max, v_max);
      b.samples.push_back({idx, x, is_obstacle(o, x, r_max), false});
    }
    for (int s = 0; s < boundary; ++s) {
      const State x = boundary_sample(o, rng, v_max, r_max);
      b.samples.push_back({idx, x, true, true});
    }
  }
  return b;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  obstacle += o.obstacle;
  safe += o.safe;
  input += o.input;
  lie += o.lie;
  boundary += o.boundary;
  reg += o.reg;
  samples += o.samples;
  return *this;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"obstacle", obstacle}, {"safe", safe}, {"input", input},     {"lie", lie},
          {"boundary", boundary}, {"reg", reg},   {"total", total()}, {"samples", samples}};
}

void accumulate_loss(const CertificateEval& e, const Eigen::Vector4d& x, bool obstacle, bool boundary,
                     const LossWeights& w, double u_max, LossBreakdown& acc) {
  acc.samples += 1;
  if (boundary) {
    acc.boundary += w.boundary * relu(e.h + w.eps_obstacle);
    return;
  }
  if (obstacle) {
    acc.obstacle += w.obstacle * relu(e.h + w.eps_obstacle);
  } else {
    acc.safe += w.safe * (1.0 - e.h);
  }
  acc.input += w.input * (e.u - clamp_input(e.u, u_max)).norm();
  if (e.has_k) {
    const Eigen::Vector4d eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d>(e.K, Eigen::EigenvaluesOnly).eigenvalues();
    for (int i = 0; i < 4; ++i) acc.lie += w.lie * relu(eig(i) + w.eps_lie);
  }
  for (const auto& d : e.dP) acc.reg += w.reg * d.squaredNorm();
  (void)x;
}

LossBreakdown loss_batch(const ModelParams& params, const Batch& batch, const LossWeights& weights) {
  const CertificateNetwork net(params);
  std::vector<Observation> os;
  std::vector<State> xs;
  for (const auto& s : batch.samples) {
    os.push_back(batch.observations.at(s.obs));
    xs.push_back(s.x);
  }
  const auto evals = net.forward(std::span<const Observation>(os), std::span<const State>(xs));
  LossBreakdown acc;
  for (std::size_t j = 0; j < evals.size(); ++j) {
    const auto& s = batch.samples[j];
    accumulate_loss(evals[j], s.x.vec(), s.obstacle, s.boundary, weights, params.config.u_max, acc);
  }
  if (!std::isfinite(acc.total())) throw TrainingDiverged("loss_batch: non-finite loss");
  return acc;
}

template <typename S>
LossBreakdown loss_and_gradient(const NetConfig& config, const Networks<S>& nets, const Batch& batch,
                                const LossWeights& weights, Rng* dropout_rng, NetworksGrad<S>* grad) {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.samples.size());
  std::vector<Observation> os(batch.samples.size());
  std::vector<State> xs(batch.samples.size());
  for (std::size_t j = 0; j < batch.samples.size(); ++j) {
    os[j] = batch.observations.at(batch.samples[j].obs);
    xs[j] = batch.samples[j].x;
  }
  nn::Mat<S> in, in_tan;
  encode_inputs<S>(config, os, xs, in, in_tan);

  nn::MlpTrace<S> lt, pt, rt;
  nn::forward(nets.latent, in, &in_tan, 4, lt);
  nn::Mat<S> z = lt.out;
  nn::Mat<S> z_tan = lt.out_tan;
  nn::Mat<S> mask;
  const bool use_dropout = dropout_rng != nullptr && config.dropout > 0.0;
  if (use_dropout) {
    std::bernoulli_distribution keep(1.0 - config.dropout);
    const S scale = static_cast<S>(1.0 / (1.0 - config.dropout));
    mask.resize(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*dropout_rng) ? scale : S(0);
    z.array() *= mask.array();
    for (int i = 0; i < 4; ++i) z_tan.middleCols(i * b, b).array() *= mask.array();
  }
  nn::forward(nets.cbf_head, z, &z_tan, 4, pt);
  nn::forward(nets.ctrl_head, z, nullptr, 0, rt);

  const int nf = config.features;
  nn::Mat<S> g_p, g_p_tan, g_r;
  if (grad) {
    g_p = nn::Mat<S>::Zero(pt.out.rows(), b);
    g_p_tan = nn::Mat<S>::Zero(pt.out.rows(), 4 * b);
    g_r = nn::Mat<S>::Zero(rt.out.rows(), b);
  }
  LossBreakdown total;
  FeatureMatrices f;
  SampleGrad sg;
  for (Eigen::Index j = 0; j < b; ++j) {
    f.p = Eigen::Map<const Eigen::Matrix<S, 4, Eigen::Dynamic>>(pt.out.col(j).data(), 4, nf)
              .transpose()
              .template cast<double>();
    for (int i = 0; i < 4; ++i) {
      f.p_dx[i] = Eigen::Map<const Eigen::Matrix<S, 4, Eigen::Dynamic>>(pt.out_tan.col(i * b + j).data(), 4, nf)
                      .transpose()
                      .template cast<double>();
    }
    f.r = Eigen::Map<const Eigen::Matrix<S, 2, Eigen::Dynamic>>(rt.out.col(j).data(), 2, nf)
              .transpose()
              .template cast<double>();
    const auto& s = batch.samples[j];
    const LossBreakdown lb =
        sample_loss(f, s.x.vec(), s.obstacle, s.boundary, weights, config, grad ? &sg : nullptr);
    if (!std::isfinite(lb.total())) {
      std::ostringstream msg;
      msg << "non-finite loss at sample " << j << " x=[" << s.x.vec().transpose() << "] obstacle=" << s.obstacle
          << " boundary=" << s.boundary;
      throw TrainingDiverged(msg.str());
    }
    total += lb;
    if (grad) {
      Eigen::Map<Eigen::Matrix<S, 4, Eigen::Dynamic>>(g_p.col(j).data(), 4, nf) = sg.p.transpose().cast<S>();
      for (int i = 0; i < 4; ++i) {
        Eigen::Map<Eigen::Matrix<S, 4, Eigen::Dynamic>>(g_p_tan.col(i * b + j).data(), 4, nf) =
            sg.p_dx[i].transpose().cast<S>();
      }
      Eigen::Map<Eigen::Matrix<S, 2, Eigen::Dynamic>>(g_r.col(j).data(), 2, nf) = sg.r.transpose().cast<S>();
    }
  }
  if (!grad) return total;

  nn::Mat<S> g_z, g_z_tan, g_z_ctrl;
  nn::backward(nets.cbf_head, pt, g_p, &g_p_tan, grad->cbf_head, &g_z, &g_z_tan);
  nn::backward(nets.ctrl_head, rt, g_r, nullptr, grad->ctrl_head, &g_z_ctrl,
               nullptr);
  g_z += g_z_ctrl;
  if (use_dropout) {
    g_z.array() *= mask.array();
    for (int i = 0; i < 4; ++i) g_z_tan.middleCols(i * b, b).array() *= mask.array();
  }
  nn::backward(nets.latent, lt, g_z, &g_z_tan, grad->latent, nullptr,
               nullptr);
  return total;
}

template LossBreakdown loss_and_gradient<float>(const NetConfig&, const Networks<float>&, const Batch&,
                                                const LossWeights&, Rng*, NetworksGrad<float>*);
template LossBreakdown loss_and_gradient<double>(const NetConfig&, const Networks<double>&, const Batch&,
                                                 const LossWeights&, Rng*, NetworksGrad<double>*);

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"phase", phase},
          {"terms", sums.to_json()},
          {"mean_total", mean_total},
          {"learning_rate", learning_rate},
          {"wall_seconds", wall_seconds}};
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, const ModelParams& init,
                  const std::function<void(const EpochLog&, const ModelParams&)>& on_epoch) {
  if (dataset.size() < 1) throw std::invalid_argument("train: empty dataset");
  Networks<float> nets{init.latent, init.cbf_head, init.ctrl_head};
  auto grad = NetworksGrad<float>::zeros_like(nets);
  auto m = NetworksGrad<float>::zeros_like(nets);
  auto v = NetworksGrad<float>::zeros_like(nets);
  Rng rng(config.seed);

  TrainResult result;
  result.params = init;
  const int n_obs = dataset.size();
  std::vector<int> order(n_obs);
  std::iota(order.begin(), order.end(), 0);

  const PhaseConfig* phases[2] = {&config.phase1, &config.phase2};
  long total_steps = 0;
  for (const auto* p : phases) {
    total_steps += static_cast<long>(p->epochs) * ((n_obs + p->observations_per_batch - 1) / p->observations_per_batch);
  }
  long step = 0;
  int global_epoch = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int phase = 0; phase < 2; ++phase) {
    const PhaseConfig& pc = *phases[phase];
    for (int e = 0; e < pc.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      LossBreakdown epoch_sum;
      double lr = config.learning_rate;
      for (int start = 0; start < n_obs; start += pc.observations_per_batch) {
        const int end = std::min(n_obs, start + pc.observations_per_batch);
        const Batch batch = sample_batch(dataset, std::span<const int>(order.data() + start, end - start),
                                         pc.states_per_observation, pc.boundary_per_observation, rng);
        grad.set_zero();
        const LossBreakdown lb = loss_and_gradient<float>(init.config, nets, batch, config.weights, &rng, &grad);
        const double mean = lb.total() / lb.samples;
        if (!std::isfinite(mean) || mean > config.divergence_threshold) {
          std::ostringstream msg;
          msg << "training diverged at epoch " << global_epoch + 1 << ": " << lb.to_json().dump();
          throw TrainingDiverged(msg.str());
        }
        double scale = 1.0 / lb.samples;
        if (config.grad_clip > 0.0) {
          const double gn =
              std::sqrt(grad.latent.squared_norm() + grad.cbf_head.squared_norm() + grad.ctrl_head.squared_norm()) *
              scale;
          if (gn > config.grad_clip) scale *= config.grad_clip / gn;
        }
        ++step;
        lr = eval_lr(config, step - 1, total_steps);
        const double lr_t = lr * std::sqrt(1.0 - std::pow(config.beta2, static_cast<double>(step))) /
                            (1.0 - std::pow(config.beta1, static_cast<double>(step)));
        adam_update(nets.latent, grad.latent, m.latent, v.latent, scale, lr_t, config);
        adam_update(nets.cbf_head, grad.cbf_head, m.cbf_head, v.cbf_head, scale, lr_t, config);
        adam_update(nets.ctrl_head, grad.ctrl_head, m.ctrl_head, v.ctrl_head, scale, lr_t, config);
        epoch_sum += lb;
      }
      EpochLog log;
      log.epoch = ++global_epoch;
      log.phase = phase + 1;
      log.sums = epoch_sum;
      log.mean_total = epoch_sum.total() / std::max(1, epoch_sum.samples);
      log.learning_rate = lr;
      log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.push_back(log);
      if (on_epoch) {
        result.params.latent = nets.latent;
        result.params.cbf_head = nets.cbf_head;
        result.params.ctrl_head = nets.ctrl_head;
        on_epoch(log, result.params);
      }
    }
  }
  result.params.latent = std::move(nets.latent);
  result.params.cbf_head = std::move(nets.cbf_head);
  result.params.ctrl_head = std::move(nets.ctrl_head);
  result.params.metadata["training"] = config.to_json();
  result.params.metadata["dataset"] = dataset.config.to_json();
  return result;
}

double lie_residual(const CertificateEval& e, const Eigen::Vector4d& x, const ControlInput& u) {
  const Eigen::Vector4d xdot = system_a() * x + system_b() * u;
  return e.grad_h.dot(xdot) + alpha(e.h);
}

nlohmann::json ViolationStats::to_json() const {
  return {{"obstacle_rate", obstacle_rate},
          {"input_rate", input_rate},
          {"lie_rate", lie_rate},
          {"obstacle_samples", obstacle_samples},
          {"total_samples", total_samples}};
}

ViolationStats evaluate_constraints(const ModelParams& params, const Dataset& holdout, int states_per_observation,
                                    std::uint64_t seed) {
  const CertificateNetwork net(params);
  Rng rng(seed);
  long obstacle_viol = 0, input_viol = 0, lie_viol = 0;
  ViolationStats st;
  const double r_max = holdout.config.r_max, v_max = holdout.config.v_max;
  for (int i = 0; i < holdout.size(); ++i) {
    const Observation o = holdout.observation(i);
    std::vector<State> xs(states_per_observation);
    for (auto& x : xs) x = sample_state(rng, r_max, v_max);
    const auto evals = net.forward(o, std::span<const State>(xs));
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const auto& e = evals[j];
      const bool obs = is_obstacle(o, xs[j], r_max);
      if (obs) {
        ++st.obstacle_samples;
        if (e.h > 0.0) ++obstacle_viol;
      }
      if (e.u.norm() > params.config.u_max) ++input_viol;
      if (lie_residual(e, xs[j].vec(), e.u) < 0.0) ++lie_viol;
      ++st.total_samples;
    }
  }
  st.obstacle_rate = st.obstacle_samples > 0 ? 100.0 * obstacle_viol / st.obstacle_samples : 0.0;
  st.input_rate = st.total_samples > 0 ? 100.0 * input_viol / st.total_samples : 0.0;
  st.lie_rate = st.total_samples > 0 ? 100.0 * lie_viol / st.total_samples : 0.0;
  return st;
}

}  // namespace obscbf
