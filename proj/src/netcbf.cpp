#include "obscbf/netcbf.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <type_traits>

namespace obscbf {
namespace {

constexpr int kCheckpointFormat = 1;

template <typename S>
nn::Mlp<S> build(const std::vector<int>& sizes, double out_scale, Rng& rng) {
  return nn::make_mlp<S>(sizes, nn::Activation::kLinear, out_scale, rng);
}

std::vector<int> concat(int first, const std::vector<int>& mid, int last) {
  std::vector<int> s{first};
  s.insert(s.end(), mid.begin(), mid.end());
  s.push_back(last);
  return s;
}

void check_finite(const nn::Mat<double>& m, const char* what) {
  if (!m.allFinite()) throw std::runtime_error(std::string("certificate network: non-finite activation in ") + what);
}

template <typename Params>
struct NamedTensor {
  static constexpr bool kConst = std::is_const_v<Params>;
  std::string name;
  std::conditional_t<kConst, const Eigen::MatrixXf*, Eigen::MatrixXf*> weight = nullptr;
  std::conditional_t<kConst, const Eigen::VectorXf*, Eigen::VectorXf*> bias = nullptr;
};

// Storage order: latent, cbf_head, ctrl_head; per layer weight then bias.
template <typename Params>
std::vector<NamedTensor<Params>> named_tensors(Params& p) {
  std::vector<NamedTensor<Params>> out;
  const std::pair<const char*, decltype(&p.latent)> nets[] = {
      {"latent", &p.latent}, {"cbf_head", &p.cbf_head}, {"ctrl_head", &p.ctrl_head}};
  for (const auto& [prefix, net] : nets) {
    for (std::size_t l = 0; l < net->layers.size(); ++l) {
      const std::string base = std::string(prefix) + "." + std::to_string(l);
      out.push_back({base + ".weight", &net->layers[l].weight, nullptr});
      out.push_back({base + ".bias", nullptr, &net->layers[l].bias});
    }
  }
  return out;
}

}  // namespace

nlohmann::json NetConfig::to_json() const {
  return {{"latent_hidden", latent_hidden},   {"latent_dim", latent_dim},
          {"head_hidden", head_hidden},       {"features", features},
          {"dropout", dropout},               {"eps_r", eps_r},
          {"u_max", u_max},                   {"range_scale", range_scale},
          {"velocity_scale", velocity_scale}, {"r_min", r_min},
          {"p_output_scale", p_output_scale}, {"r_output_scale", r_output_scale}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.latent_hidden = j.value("latent_hidden", c.latent_hidden);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.features = j.value("features", c.features);
  c.dropout = j.value("dropout", c.dropout);
  c.eps_r = j.value("eps_r", c.eps_r);
  c.u_max = j.value("u_max", c.u_max);
  c.range_scale = j.value("range_scale", c.range_scale);
  c.velocity_scale = j.value("velocity_scale", c.velocity_scale);
  c.r_min = j.value("r_min", c.r_min);
  c.p_output_scale = j.value("p_output_scale", c.p_output_scale);
  c.r_output_scale = j.value("r_output_scale", c.r_output_scale);
  return c;
}

ModelParams ModelParams::initialize(const NetConfig& config, std::uint64_t seed) {
  if (config.features < 1 || config.latent_dim < 1) throw std::invalid_argument("NetConfig: invalid sizes");
  Rng rng(seed);
  ModelParams p;
  p.config = config;
  p.latent = nn::make_mlp<float>(concat(NetConfig::kInputDim, config.latent_hidden, config.latent_dim),
                                 nn::Activation::kLinear, 1.0, rng);
  p.cbf_head = build<float>(concat(config.latent_dim, config.head_hidden, 4 * config.features),
                            config.p_output_scale, rng);
  p.ctrl_head = build<float>(concat(config.latent_dim, config.head_hidden, 2 * config.features),
                             config.r_output_scale, rng);
  return p;
}

double rho(double h) { return h >= 0.0 ? 2.0 : 1.0 / (0.5 + std::abs(h)); }

double rho_derivative(double h) {
  if (h >= 0.0) return 0.0;
  const double d = 0.5 - h;
  return 1.0 / (d * d);
}

double alpha(double h) { return rho(h) * h; }

Eigen::Matrix4d gradient_s(const Eigen::Matrix4d& p, const std::array<Eigen::Matrix4d, 4>& p_dx,
                           const Eigen::Vector4d& x) {
  Eigen::Matrix4d m;
  for (int i = 0; i < 4; ++i) m.row(i) = x.transpose() * p_dx[i];
  return p + 0.5 * m;
}

ControlInput sdre_control(const Eigen::Matrix4d& s, const Eigen::Matrix2d& r, const Eigen::Vector4d& x) {
  const Eigen::Vector2d w = (s * x).tail<2>();
  return -r.ldlt().solve(w);
}

Eigen::Matrix4d k_matrix(const Eigen::Matrix4d& s, const Eigen::Matrix4d& p, const Eigen::Matrix2d& r,
                         const Eigen::Vector4d& x, double r_min) {
  const double n2 = x.squaredNorm();
  if (n2 < r_min * r_min) throw std::domain_error("k_matrix: state too close to the origin");
  const Eigen::Matrix4d a = system_a();
  const Eigen::Matrix<double, 4, 2> b = system_b();
  const Eigen::Matrix4d g = b * r.inverse() * b.transpose();
  const double h = 1.0 - x.dot(p * x);
  const Eigen::Matrix4d l = a.transpose() * s + s.transpose() * a - 2.0 * s.transpose() * g * s -
                            rho(h) * (Eigen::Matrix4d::Identity() / n2 - p);
  return 0.5 * (l + l.transpose());
}

CertificateEval assemble_certificate(const FeatureMatrices& f, const Eigen::Vector4d& x, double eps_r,
                                     double r_min) {
  CertificateEval e;
  e.z = f.z;
  e.P = f.p.transpose() * f.p;
  for (int i = 0; i < 4; ++i) e.dP[i] = f.p_dx[i].transpose() * f.p + f.p.transpose() * f.p_dx[i];
  e.S = gradient_s(e.P, e.dP, x);
  e.h = 1.0 - x.dot(e.P * x);
  e.R = f.r.transpose() * f.r + eps_r * Eigen::Matrix2d::Identity();
  e.u = sdre_control(e.S, e.R, x);
  e.grad_h = -2.0 * e.S * x;
  if (x.squaredNorm() >= r_min * r_min) {
    e.K = k_matrix(e.S, e.P, e.R, x, r_min);
    e.has_k = true;
  }
  return e;
}

template <typename S>
void encode_inputs(const NetConfig& c, std::span<const Observation> os, std::span<const State> xs,
                   nn::Mat<S>& in, nn::Mat<S>& in_tan) {
  const Eigen::Index b = static_cast<Eigen::Index>(xs.size());
  if (os.size() != xs.size()) throw std::invalid_argument("encode_inputs: size mismatch");
  in.resize(NetConfig::kInputDim, b);
  in_tan = nn::Mat<S>::Zero(NetConfig::kInputDim, 4 * b);
  const double scales[4] = {1.0 / c.range_scale, 1.0 / c.range_scale, 1.0 / c.velocity_scale,
                            1.0 / c.velocity_scale};
  for (Eigen::Index j = 0; j < b; ++j) {
    in.col(j).template head<kObsBins>() = (os[j] / c.range_scale).template cast<S>();
    const Eigen::Vector4d x = xs[j].vec();
    for (int i = 0; i < 4; ++i) {
      in(kObsBins + i, j) = static_cast<S>(x(i) * scales[i]);
      in_tan(kObsBins + i, i * b + j) = static_cast<S>(scales[i]);
    }
  }
}

template void encode_inputs<float>(const NetConfig&, std::span<const Observation>, std::span<const State>,
                                   nn::Mat<float>&, nn::Mat<float>&);
template void encode_inputs<double>(const NetConfig&, std::span<const Observation>, std::span<const State>,
                                    nn::Mat<double>&, nn::Mat<double>&);

CertificateNetwork::CertificateNetwork(const ModelParams& params)
    : config_(params.config),
      latent_(params.latent.cast<double>()),
      cbf_head_(params.cbf_head.cast<double>()),
      ctrl_head_(params.ctrl_head.cast<double>()) {
  if (cbf_head_.out() != 4 * config_.features || ctrl_head_.out() != 2 * config_.features ||
      latent_.in() != NetConfig::kInputDim) {
    throw std::invalid_argument("CertificateNetwork: parameter shapes disagree with config");
  }
}

std::vector<FeatureMatrices> CertificateNetwork::features(std::span<const Observation> os,
                                                          std::span<const State> xs) const {
  for (const auto& x : xs) {
    if (!x.finite()) throw std::invalid_argument("certificate network: non-finite state");
  }
  for (const auto& o : os) {
    if (!o.allFinite()) throw std::invalid_argument("certificate network: non-finite observation");
  }
  nn::Mat<double> in, in_tan;
  encode_inputs<double>(config_, os, xs, in, in_tan);
  nn::MlpTrace<double> lt, pt, rt;
  nn::forward(latent_, in, &in_tan, 4, lt);
  check_finite(lt.out, "latent");
  nn::forward(cbf_head_, lt.out, &lt.out_tan, 4, pt);
  nn::forward(ctrl_head_, lt.out, nullptr, 0, rt);
  check_finite(pt.out, "cbf head");
  check_finite(pt.out_tan, "cbf head tangents");
  check_finite(rt.out, "controller head");

  const Eigen::Index b = static_cast<Eigen::Index>(xs.size());
  const int nf = config_.features;
  std::vector<FeatureMatrices> out(xs.size());
  for (Eigen::Index j = 0; j < b; ++j) {
    auto& f = out[j];
    f.p = Eigen::Map<const Eigen::Matrix<double, 4, Eigen::Dynamic>>(pt.out.col(j).data(), 4, nf).transpose();
    for (int i = 0; i < 4; ++i) {
      f.p_dx[i] =
          Eigen::Map<const Eigen::Matrix<double, 4, Eigen::Dynamic>>(pt.out_tan.col(i * b + j).data(), 4, nf)
              .transpose();
    }
    f.r = Eigen::Map<const Eigen::Matrix<double, 2, Eigen::Dynamic>>(rt.out.col(j).data(), 2, nf).transpose();
    f.z = lt.out.col(j);
  }
  return out;
}

std::vector<CertificateEval> CertificateNetwork::forward(std::span<const Observation> os,
                                                         std::span<const State> xs) const {
  const auto feats = features(os, xs);
  std::vector<CertificateEval> out;
  out.reserve(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) {
    out.push_back(assemble_certificate(feats[j], xs[j].vec(), config_.eps_r, config_.r_min));
  }
  return out;
}

std::vector<CertificateEval> CertificateNetwork::forward(const Observation& o, std::span<const State> xs) const {
  const std::vector<Observation> os(xs.size(), o);
  return forward(std::span<const Observation>(os), xs);
}

CertificateEval CertificateNetwork::forward(const Observation& o, const State& x) const {
  return forward(o, std::span<const State>(&x, 1)).front();
}

Eigen::Matrix4d CertificateNetwork::k_matrix(const Observation& o, const State& x) const {
  const double n = x.vec().norm();
  if (n < config_.r_min) throw std::domain_error("k_matrix: state too close to the origin");
  return forward(o, x).K;
}

std::vector<std::string> tensor_names(const ModelParams& params) {
  std::vector<std::string> names;
  for (const auto& t : named_tensors(params)) names.push_back(t.name);
  return names;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["config"] = params.config.to_json();
  doc["metadata"] = params.metadata;
  doc["tensors"] = nlohmann::json::array();
  std::ofstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot open " + path + ".bin");
  std::size_t offset = 0;
  for (const auto& t : named_tensors(params)) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;
    if (t.weight) {
      data = *t.weight;
    } else {
      data = t.bias->transpose();
    }
    const std::vector<Eigen::Index> shape =
        t.weight ? std::vector<Eigen::Index>{data.rows(), data.cols()} : std::vector<Eigen::Index>{data.cols()};
    doc["tensors"].push_back({{"name", t.name}, {"shape", shape}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    offset += static_cast<std::size_t>(data.size());
  }
  if (!bin) throw std::runtime_error("save_checkpoint: write failed");
  doc["total_floats"] = offset;
  std::ofstream meta(path + ".json");
  if (!meta) throw std::runtime_error("save_checkpoint: cannot open " + path + ".json");
  meta << doc.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream meta(path + ".json");
  if (!meta) throw std::runtime_error("load_checkpoint: cannot open " + path + ".json");
  const nlohmann::json doc = nlohmann::json::parse(meta);
  if (doc.value("format", 0) != kCheckpointFormat) throw std::runtime_error("load_checkpoint: version mismatch");

  ModelParams p = ModelParams::initialize(NetConfig::from_json(doc.at("config")), 0);
  p.metadata = doc.value("metadata", nlohmann::json::object());
  const auto& tensors = doc.at("tensors");
  auto expected = named_tensors(p);
  if (tensors.size() != expected.size()) throw std::runtime_error("load_checkpoint: tensor count mismatch");

  const std::size_t total = doc.at("total_floats").get<std::size_t>();
  const auto bytes = std::filesystem::file_size(path + ".bin");
  if (bytes != total * sizeof(float)) throw std::runtime_error("load_checkpoint: payload size mismatch");
  std::ifstream bin(path + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open " + path + ".bin");

  for (std::size_t k = 0; k < expected.size(); ++k) {
    const auto& entry = tensors[k];
    if (entry.at("name").get<std::string>() != expected[k].name) {
      throw std::runtime_error("load_checkpoint: unexpected tensor " + entry.at("name").get<std::string>());
    }
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    Eigen::Index rows = 1, cols = 1;
    if (expected[k].weight) {
      if (shape.size() != 2) throw std::runtime_error("load_checkpoint: shape mismatch for " + expected[k].name);
      rows = expected[k].weight->rows();
      cols = expected[k].weight->cols();
      if (shape[0] != rows || shape[1] != cols) {
        throw std::runtime_error("load_checkpoint: shape mismatch for " + expected[k].name);
      }
    } else {
      cols = expected[k].bias->size();
      if (shape.size() != 1 || shape[0] != cols) {
        throw std::runtime_error("load_checkpoint: shape mismatch for " + expected[k].name);
      }
    }
    if (offset + static_cast<std::size_t>(rows * cols) > total) {
      throw std::runtime_error("load_checkpoint: tensor out of bounds");
    }
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data(rows, cols);
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
    bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!bin) throw std::runtime_error("load_checkpoint: truncated payload");
    if (expected[k].weight) {
      *expected[k].weight = data;
    } else {
      *expected[k].bias = data.transpose();
    }
  }
  return p;
}

}  // namespace obscbf
