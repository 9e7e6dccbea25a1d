#include "afcl/mlp.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "afcl/errors.hpp"
#include "afcl/learners.hpp"

namespace afcl {

using nlohmann::json;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh_fn: return "tanh";
    case Activation::relu: return "relu";
  }
  throw std::logic_error("unreachable activation");
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh_fn;
  if (s == "relu") return Activation::relu;
  throw error("unknown activation '" + s + "'");
}

namespace {

Eigen::VectorXd act(const Eigen::VectorXd& z, Activation a) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::tanh_fn: return z.array().tanh();
    case Activation::relu: return z.cwiseMax(0.0);
  }
  throw std::logic_error("unreachable activation");
}

/// Derivative expressed through the activation's own output.
Eigen::VectorXd act_deriv_from_output(const Eigen::VectorXd& f, Activation a) {
  switch (a) {
    case Activation::identity: return Eigen::VectorXd::Ones(f.size());
    case Activation::tanh_fn: return 1.0 - f.array().square();
    // Subgradient 0 at the kink: f > 0 exactly when the pre-activation was.
    case Activation::relu: return (f.array() > 0.0).cast<double>();
  }
  throw std::logic_error("unreachable activation");
}

void check_dims_list(const std::vector<int>& dims) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (int d : dims)
    if (d <= 0) throw std::invalid_argument("Mlp: widths must be positive");
}

}  // namespace

std::vector<int> Mlp::dims() const {
  std::vector<int> out{input_dim()};
  for (const auto& L : layers) out.push_back(static_cast<int>(L.cols()));
  return out;
}

Mlp make_mlp(const std::vector<int>& dims, Activation act) {
  check_dims_list(dims);
  Mlp net;
  net.act = act;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    net.layers.push_back(Eigen::MatrixXd::Zero(dims[l], dims[l + 1]));
  return net;
}

Mlp make_mlp_random(const std::vector<int>& dims, Activation act, Rng& rng, double scale) {
  Mlp net = make_mlp(dims, act);
  for (auto& L : net.layers)
    for (Eigen::Index c = 0; c < L.cols(); ++c)
      for (Eigen::Index r = 0; r < L.rows(); ++r) L(r, c) = scale * rng.normal();
  return net;
}

std::vector<Eigen::VectorXd> forward_features(const Mlp& net, const Eigen::VectorXd& x) {
  if (net.layers.empty()) throw std::invalid_argument("forward_features: empty network");
  if (x.size() != net.input_dim())
    throw std::invalid_argument("forward_features: input width mismatch");
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(net.layers.size() + 1);
  feats.push_back(x);
  for (const auto& L : net.layers) feats.push_back(act(L.transpose() * feats.back(), net.act));
  return feats;
}

double mlp_loss(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return (forward_features(net, x).back() - y).squaredNorm();
}

std::vector<Eigen::MatrixXd> backprop_gradients(const Mlp& net, const Eigen::VectorXd& x,
                                                const Eigen::VectorXd& y) {
  const auto feats = forward_features(net, x);
  const int L = net.depth();
  if (y.size() != net.output_dim())
    throw std::invalid_argument("backprop_gradients: target width mismatch");
  std::vector<Eigen::MatrixXd> grads(static_cast<std::size_t>(L));
  Eigen::VectorXd delta =
      (2.0 * (feats.back() - y)).cwiseProduct(act_deriv_from_output(feats.back(), net.act));
  grads[static_cast<std::size_t>(L - 1)] =
      feats[static_cast<std::size_t>(L - 1)] * delta.transpose();
  for (int l = L - 1; l >= 1; --l) {
    delta = (net.layers[static_cast<std::size_t>(l)] * delta)
                .cwiseProduct(act_deriv_from_output(feats[static_cast<std::size_t>(l)], net.act));
    grads[static_cast<std::size_t>(l - 1)] =
        feats[static_cast<std::size_t>(l - 1)] * delta.transpose();
  }
  return grads;
}

FeatureProjectors make_feature_projectors(const Mlp& net) {
  FeatureProjectors fp;
  for (const auto& L : net.layers) fp.proj.emplace_back(static_cast<int>(L.rows()));
  fp.anchors.resize(net.layers.size());
  return fp;
}

namespace {

Eigen::MatrixXd project_complement(const Eigen::MatrixXd& U, const Eigen::MatrixXd& M) {
  if (U.cols() == 0) return M;
  return M - U * (U.transpose() * M);
}

void ingest_anchors(Mlp& net, FeatureProjectors& fp, const Eigen::VectorXd& x) {
  const auto feats = forward_features(net, x);
  for (std::size_t l = 0; l < fp.proj.size(); ++l) {
    projector_ingest(fp.proj[l], feats[l]);  // dependent anchors are no-ops
    fp.anchors[l].push_back(feats[l]);
  }
}

GpStepResult apply_gp_update(Mlp& net, FeatureProjectors& fp, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, double gamma,
                             const std::vector<Eigen::MatrixXd>& bases) {
  GpStepResult res;
  res.loss_before = mlp_loss(net, x, y);
  const auto grads = backprop_gradients(net, x, y);
  bool all_vanished = true;
  std::vector<Eigen::MatrixXd> dirs(grads.size());
  for (std::size_t l = 0; l < grads.size(); ++l) {
    dirs[l] = project_complement(bases[l], grads[l]);
    if (dirs[l].norm() > 1e-12 * std::max(1.0, grads[l].norm())) all_vanished = false;
  }
  res.saturated = all_vanished;
  for (std::size_t l = 0; l < dirs.size(); ++l) net.layers[l] -= gamma * dirs[l];
  ingest_anchors(net, fp, x);
  res.loss_after = mlp_loss(net, x, y);
  return res;
}

}  // namespace

GpStepResult gp_step(Mlp& net, FeatureProjectors& fp, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& y, double gamma) {
  if (fp.proj.size() != net.layers.size())
    throw std::invalid_argument("gp_step: projector count differs from layer count");
  std::vector<Eigen::MatrixXd> bases;
  bases.reserve(fp.proj.size());
  for (const auto& p : fp.proj) bases.push_back(p.U);
  return apply_gp_update(net, fp, x, y, gamma, bases);
}

GpStepResult gp_lowrank_step(Mlp& net, FeatureProjectors& fp, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, double gamma,
                             double energy_threshold) {
  if (!(energy_threshold > 0.0 && energy_threshold <= 1.0))
    throw std::invalid_argument("gp_lowrank_step: energy threshold must lie in (0, 1]");
  if (fp.proj.size() != net.layers.size())
    throw std::invalid_argument("gp_lowrank_step: projector count differs from layer count");
  std::vector<Eigen::MatrixXd> bases(fp.proj.size());
  for (std::size_t l = 0; l < fp.proj.size(); ++l) {
    const auto& stored = fp.anchors[l];
    const int d = fp.proj[l].d();
    if (stored.empty()) {
      bases[l] = Eigen::MatrixXd(d, 0);
      continue;
    }
    Eigen::MatrixXd M(d, static_cast<Eigen::Index>(stored.size()));
    for (std::size_t k = 0; k < stored.size(); ++k)
      M.col(static_cast<Eigen::Index>(k)) = stored[k];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv[0] : 0.0;
    // True numerical rank first, then the smallest prefix holding the
    // requested share of the squared singular mass.
    Eigen::Index r0 = 0;
    double total = 0.0;
    for (Eigen::Index k = 0; k < sv.size(); ++k)
      if (sv[k] >= kRankTol * smax && sv[k] > 0.0) {
        ++r0;
        total += sv[k] * sv[k];
      }
    Eigen::Index r = 0;
    double cum = 0.0;
    while (r < r0 && cum < energy_threshold * total - 1e-15 * total) {
      cum += sv[r] * sv[r];
      ++r;
    }
    bases[l] = svd.matrixU().leftCols(r);
  }
  return apply_gp_update(net, fp, x, y, gamma, bases);
}

void save_mlp_json(const Mlp& net, const std::string& path) {
  json rec;
  rec["dims"] = net.dims();
  rec["activation"] = to_string(net.act);
  json layers = json::array();
  for (const auto& L : net.layers) {
    json flat = json::array();  // row-major
    for (Eigen::Index r = 0; r < L.rows(); ++r)
      for (Eigen::Index c = 0; c < L.cols(); ++c) flat.push_back(L(r, c));
    layers.push_back(flat);
  }
  rec["layers"] = layers;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("save_mlp_json: cannot open '" + path + "'");
  out << rec.dump(2) << '\n';
}

Mlp load_mlp_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("load_mlp_json: cannot open '" + path + "'");
  json rec;
  try {
    in >> rec;
  } catch (const json::parse_error& e) {
    throw error(std::string("load_mlp_json: ") + e.what());
  }
  if (!rec.contains("dims") || !rec.contains("activation") || !rec.contains("layers"))
    throw error("load_mlp_json: checkpoint must carry dims, activation and layers");
  const std::vector<int> dims = rec["dims"].get<std::vector<int>>();
  Mlp net = make_mlp(dims, activation_from_string(rec["activation"].get<std::string>()));
  const json& layers = rec["layers"];
  if (layers.size() != net.layers.size())
    throw error("load_mlp_json: layer count does not match dims");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& L = net.layers[l];
    const json& flat = layers[l];
    if (static_cast<Eigen::Index>(flat.size()) != L.size())
      throw error("load_mlp_json: layer " + std::to_string(l) + " has wrong entry count");
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < L.rows(); ++r)
      for (Eigen::Index c = 0; c < L.cols(); ++c) L(r, c) = flat[k++].get<double>();
  }
  return net;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& at) {
  Eigen::VectorXd probe = at;
  Eigen::VectorXd g(at.size());
  for (Eigen::Index k = 0; k < at.size(); ++k) {
    const double h = 1e-6 * (1.0 + std::abs(at[k]));
    probe[k] = at[k] + h;
    const double up = f(probe);
    probe[k] = at[k] - h;
    const double down = f(probe);
    probe[k] = at[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

AffineModel linearize_model(const ScalarModel& f, const Eigen::VectorXd& anchor) {
  AffineModel out;
  out.slope = f.gradient ? f.gradient(anchor) : fd_gradient(f.value, anchor);
  out.intercept = f.value(anchor) - out.slope.dot(anchor);
  return out;
}

ModelTrajectory linearized_icl_run(const std::vector<NonlinearTask>& tasks,
                                   const Eigen::VectorXd& theta0) {
  IclState state(static_cast<int>(theta0.size()));
  state.theta = theta0;
  ModelTrajectory traj{state.theta};
  for (const NonlinearTask& task : tasks) {
    const AffineModel aff = linearize_model(task.f, state.theta);
    ScalarTask lin;
    lin.x = aff.slope;
    lin.y = task.y - aff.intercept;  // slope^T theta = y - intercept <=> f~ = y
    icl_step(state, lin);
    traj.push_back(state.theta);
  }
  return traj;
}

LayerwiseRls::LayerwiseRls(const Mlp& net, double beta, double lambda)
    : beta_(beta), lambda_(lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("LayerwiseRls: lambda must be positive");
  if (beta < 0.0) throw std::invalid_argument("LayerwiseRls: beta must be nonnegative");
  for (const auto& L : net.layers)
    Phi_scaled_.push_back(Eigen::MatrixXd::Identity(L.rows(), L.rows()) / lambda);
  next_weight_ = beta;
}

Eigen::MatrixXd LayerwiseRls::phi(int layer) const {
  const double s = std::exp(log_scale_);
  if (s == 0.0 || !std::isfinite(s))
    throw numeric_range_error("LayerwiseRls: weight scale is not representable");
  Eigen::MatrixXd Phi = s * Phi_scaled_.at(static_cast<std::size_t>(layer));
  if (!Phi.allFinite()) throw numeric_range_error("LayerwiseRls: Phi overflows when unscaled");
  return Phi;
}

void LayerwiseRls::step(Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                        double gamma) {
  if (net.layers.size() != Phi_scaled_.size())
    throw std::invalid_argument("LayerwiseRls: network depth changed");
  const auto grads = backprop_gradients(net, x, y);
  const double s = std::exp(log_scale_);
  if (s == 0.0 || !std::isfinite(s))
    throw numeric_range_error("LayerwiseRls: weight scale is not representable");
  // lambda * Phi plays the projector: update first, with the pre-step Phi...
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    net.layers[l] -= gamma * lambda_ * s * (Phi_scaled_[l] * grads[l]);
  // ...then every layer's Phi absorbs the anchor feature at the new weights.
  const auto feats = forward_features(net, x);
  for (std::size_t l = 0; l < Phi_scaled_.size(); ++l) {
    const Eigen::VectorXd& a = feats[l];
    const Eigen::VectorXd Phia = Phi_scaled_[l] * a;
    const double q = a.dot(Phia);
    if (beta_ == 0.0) {
      const double an = a.norm();
      // Mirror the projector's dependence rule: an already-spanned feature
      // leaves Phi untouched instead of dividing by ~0.
      if (an == 0.0 || std::sqrt(std::max(q, 0.0) * lambda_) / an < kDependenceTol) continue;
    }
    const double denom = next_weight_ + q;
    if (!std::isfinite(denom) || denom <= 0.0)
      throw numeric_range_error("LayerwiseRls: denominator out of range at layer " +
                                std::to_string(l));
    Phi_scaled_[l] -= (Phia * Phia.transpose()) / denom;
    Phi_scaled_[l] = ((Phi_scaled_[l] + Phi_scaled_[l].transpose()) / 2.0).eval();
  }
  ++t_;
  if (beta_ != 0.0) {
    next_weight_ *= beta_;
    if (next_weight_ <= 1e-100 || next_weight_ >= 1e100) {
      const double f = next_weight_;
      log_scale_ += std::log(f);
      for (auto& Phi : Phi_scaled_) Phi /= f;
      next_weight_ = 1.0;
    }
  }
}

Mlp layerwise_rls_train(Mlp net, const std::vector<DeepTask>& tasks, double beta,
                        double lambda, double gamma) {
  LayerwiseRls trainer(net, beta, lambda);
  for (const DeepTask& task : tasks) trainer.step(net, task.x, task.y, gamma);
  return net;
}

}  // namespace afcl
