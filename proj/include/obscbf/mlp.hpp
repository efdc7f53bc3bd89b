#pragma once

// Dense MLP that propagates forward-mode tangents alongside values, with an
// explicit reverse pass through both. Tangents are stored as k blocks of B
// columns: block i holds d(activation)/d(input direction i) for the batch.

#include <cmath>
#include <random>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace obscbf::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Activation { kElu, kLinear };

template <typename S>
struct Dense {
  Mat<S> weight;  // out x in
  Vec<S> bias;
  Activation act = Activation::kElu;

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }
};

template <typename S>
struct Mlp {
  std::vector<Dense<S>> layers;

  int in() const { return layers.front().in(); }
  int out() const { return layers.back().out(); }

  template <typename T>
  Mlp<T> cast() const {
    Mlp<T> m;
    for (const auto& l : layers) m.layers.push_back({l.weight.template cast<T>(), l.bias.template cast<T>(), l.act});
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

/// Uniform fan-in initialization (scaled for ELU), last layer multiplied by
/// output_scale; biases zero.
template <typename S, typename Rng>
Mlp<S> make_mlp(const std::vector<int>& sizes, Activation last, double output_scale, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output size");
  Mlp<S> m;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const double bound = std::sqrt(3.0 / fan_in) * (l + 2 == sizes.size() ? output_scale : 1.2);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Dense<S> d;
    d.weight.resize(sizes[l + 1], fan_in);
    for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = static_cast<S>(dist(rng));
    d.bias = Vec<S>::Zero(sizes[l + 1]);
    d.act = l + 2 == sizes.size() ? last : Activation::kElu;
    m.layers.push_back(std::move(d));
  }
  return m;
}

template <typename S>
struct MlpGrad {
  std::vector<Mat<S>> weight;
  std::vector<Vec<S>> bias;

  static MlpGrad zeros_like(const Mlp<S>& m) {
    MlpGrad g;
    for (const auto& l : m.layers) {
      g.weight.push_back(Mat<S>::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vec<S>::Zero(l.bias.size()));
    }
    return g;
  }

  void set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }

  double squared_norm() const {
    double n = 0.0;
    for (const auto& w : weight) n += static_cast<double>(w.squaredNorm());
    for (const auto& b : bias) n += static_cast<double>(b.squaredNorm());
    return n;
  }
};

/// Activations saved by forward() for the reverse pass.
template <typename S>
struct MlpTrace {
  int tangents = 0;
  Eigen::Index batch = 0;
  std::vector<Mat<S>> in;       // layer inputs (in[0] is the network input)
  std::vector<Mat<S>> in_tan;   // layer input tangents
  std::vector<Mat<S>> pre;      // pre-activations
  std::vector<Mat<S>> pre_tan;  // pre-activation tangents
  Mat<S> out;
  Mat<S> out_tan;
};

namespace detail {

template <typename S>
void elu_inplace(Mat<S>& a, Mat<S>* d1) {
  // d1 receives phi'(a) when requested.
  if (d1) d1->resize(a.rows(), a.cols());
  S* p = a.data();
  S* q = d1 ? d1->data() : nullptr;
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p[i] > S(0)) {
      if (q) q[i] = S(1);
    } else {
      const S e = std::exp(p[i]);
      if (q) q[i] = e;
      p[i] = e - S(1);
    }
  }
}

}  // namespace detail

/// Runs the network on in (n_in x B). If in_tan is non-null it must be
/// n_in x (k B) and tangents are propagated.
template <typename S>
void forward(const Mlp<S>& net, const Mat<S>& in, const std::type_identity_t<Mat<S>>* in_tan, int k, MlpTrace<S>& trace) {
  const Eigen::Index batch = in.cols();
  const bool with_tan = in_tan != nullptr && k > 0;
  trace.tangents = with_tan ? k : 0;
  trace.batch = batch;
  const std::size_t n_layers = net.layers.size();
  trace.in.resize(n_layers);
  trace.pre.resize(n_layers);
  trace.in_tan.resize(with_tan ? n_layers : 0);
  trace.pre_tan.resize(with_tan ? n_layers : 0);

  Mat<S> h = in;
  Mat<S> t;
  if (with_tan) t = *in_tan;
  Mat<S> d1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = net.layers[l];
    Mat<S> a(layer.out(), batch);
    a.noalias() = layer.weight * h;
    a.colwise() += layer.bias;
    trace.in[l] = std::move(h);
    trace.pre[l] = a;
    Mat<S> ta;
    if (with_tan) {
      ta.resize(layer.out(), k * batch);
      ta.noalias() = layer.weight * t;
      trace.in_tan[l] = std::move(t);
      trace.pre_tan[l] = ta;
    }
    if (layer.act == Activation::kElu) {
      detail::elu_inplace(a, with_tan ? &d1 : nullptr);
      if (with_tan) {
        for (int i = 0; i < k; ++i) ta.middleCols(i * batch, batch).array() *= d1.array();
      }
    }
    h = std::move(a);
    if (with_tan) t = std::move(ta);
  }
  trace.out = std::move(h);
  if (with_tan) trace.out_tan = std::move(t);
}

/// Reverse pass. g_out matches trace.out; g_out_tan (optional) matches
/// trace.out_tan. Parameter gradients are accumulated into grad. Input
/// adjoints are written when g_in / g_in_tan are non-null.
template <typename S>
void backward(const Mlp<S>& net, const MlpTrace<S>& trace, const Mat<S>& g_out, const std::type_identity_t<Mat<S>>* g_out_tan,
              MlpGrad<S>& grad, std::type_identity_t<Mat<S>>* g_in, std::type_identity_t<Mat<S>>* g_in_tan) {
  const int k = trace.tangents;
  const bool with_tan = k > 0 && g_out_tan != nullptr;
  const Eigen::Index batch = trace.batch;
  Mat<S> gh = g_out;
  Mat<S> gt;
  if (with_tan) gt = *g_out_tan;

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& layer = net.layers[li];
    const Mat<S>& a = trace.pre[li];
    Mat<S> ga;
    Mat<S> gta;
    if (layer.act == Activation::kElu) {
      // d1 = phi'(a), d2 = phi''(a); for ELU both equal exp(a) on a <= 0.
      Mat<S> d1(a.rows(), a.cols());
      Mat<S> d2(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        const S v = a.data()[i];
        if (v > S(0)) {
          d1.data()[i] = S(1);
          d2.data()[i] = S(0);
        } else {
          const S e = std::exp(v);
          d1.data()[i] = e;
          d2.data()[i] = e;
        }
      }
      ga = gh.cwiseProduct(d1);
      if (with_tan) {
        gta.resize(gt.rows(), gt.cols());
        const Mat<S>& ta = trace.pre_tan[li];
        for (int i = 0; i < k; ++i) {
          auto gti = gt.middleCols(i * batch, batch);
          gta.middleCols(i * batch, batch) = gti.cwiseProduct(d1);
          ga.array() += gti.array() * ta.middleCols(i * batch, batch).array() * d2.array();
        }
      }
    } else {
      ga = std::move(gh);
      if (with_tan) gta = std::move(gt);
    }

    grad.weight[li].noalias() += ga * trace.in[li].transpose();
    grad.bias[li] += ga.rowwise().sum();
    if (with_tan) grad.weight[li].noalias() += gta * trace.in_tan[li].transpose();

    const bool need_input = li > 0 || g_in != nullptr;
    if (need_input) {
      gh.resize(layer.in(), batch);
      gh.noalias() = layer.weight.transpose() * ga;
    }
    if (with_tan && (li > 0 || g_in_tan != nullptr)) {
      gt.resize(layer.in(), k * batch);
      gt.noalias() = layer.weight.transpose() * gta;
    }
  }
  if (g_in) *g_in = std::move(gh);
  if (g_in_tan && with_tan) *g_in_tan = std::move(gt);
}

}  // namespace obscbf::nn
