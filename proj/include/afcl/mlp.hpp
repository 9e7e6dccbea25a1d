#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "afcl/metrics.hpp"
#include "afcl/projection.hpp"
#include "afcl/rng.hpp"

namespace afcl {

enum class Activation { identity, tanh_fn, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Feedforward net f^0(x) = x, f^l(x) = sigma(Theta_l^T f^{l-1}(x)); the
/// activation is applied at every layer, the last one included.
struct Mlp {
  std::vector<Eigen::MatrixXd> layers;  // Theta_l is d_{l-1} x d_l
  Activation act = Activation::identity;

  int depth() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return static_cast<int>(layers.front().rows()); }
  int output_dim() const { return static_cast<int>(layers.back().cols()); }
  std::vector<int> dims() const;
};

/// Zero-initialized net with the given layer widths d_0..d_L.
Mlp make_mlp(const std::vector<int>& dims, Activation act);
/// Gaussian weights scaled by `scale`; deterministic under the caller's Rng.
Mlp make_mlp_random(const std::vector<int>& dims, Activation act, Rng& rng,
                    double scale = 0.5);

/// All features f^0(x)..f^L(x); the last entry is the network output.
std::vector<Eigen::VectorXd> forward_features(const Mlp& net, const Eigen::VectorXd& x);

/// Squared-error loss ‖f^L(x) - y‖².
double mlp_loss(const Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Per-layer gradients Delta_l = f^{l-1} (delta_l)^T of the squared-error
/// loss, via backpropagation through the forward rule.
std::vector<Eigen::MatrixXd> backprop_gradients(const Mlp& net, const Eigen::VectorXd& x,
                                                const Eigen::VectorXd& y);

/// One projector per layer input (indices 0..L-1) plus the raw anchor
/// features it has ingested, kept so the low-rank variant can re-derive a
/// truncated subspace per step.
struct FeatureProjectors {
  std::vector<ProjectorState> proj;
  std::vector<std::vector<Eigen::VectorXd>> anchors;  // anchors[l][i] = f^l at task i+1
};

FeatureProjectors make_feature_projectors(const Mlp& net);

struct GpStepResult {
  bool saturated = false;  // every projected direction vanished; net frozen
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// Gradient-projection step: Theta_l -= gamma * P^{l-1} Delta_l with the
/// projectors of the *previous* tasks, then every projector ingests the new
/// anchor feature f^l_{theta_t}(x_t) evaluated at the updated parameters.
/// Leaves old tasks' features untouched at every layer.
GpStepResult gp_step(Mlp& net, FeatureProjectors& fp, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& y, double gamma);

/// Like gp_step, but each layer's anchor subspace is truncated to the
/// smallest rank holding `energy_threshold` of the squared singular mass
/// before the projector is formed. Frees directions a saturated full-rank
/// projector would block; the old-task invariance is deliberately given up.
GpStepResult gp_lowrank_step(Mlp& net, FeatureProjectors& fp, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y, double gamma,
                             double energy_threshold);

/// JSON checkpoint: dims, activation name, row-major layer matrices.
void save_mlp_json(const Mlp& net, const std::string& path);
Mlp load_mlp_json(const std::string& path);

/// Differentiable scalar function of the parameter vector; the gradient
/// falls back to central differences with step 1e-6 (1 + |theta_k|).
struct ScalarModel {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;  // may be empty
};

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& at);

/// First-order expansion around the anchor: value(theta) = intercept +
/// slope^T theta, exact at the anchor and everywhere when f is affine.
struct AffineModel {
  Eigen::VectorXd slope;
  double intercept = 0.0;

  double value(const Eigen::VectorXd& theta) const { return intercept + slope.dot(theta); }
};

AffineModel linearize_model(const ScalarModel& f, const Eigen::VectorXd& anchor);

struct NonlinearTask {
  ScalarModel f;
  double y = 0.0;
};

/// Relinearize-then-project: each task is expanded at the previous iterate
/// and handed to the ideal continual learner as the linear task
/// (slope, y - f(anchor) + slope^T anchor). All linearized constraints stay
/// satisfied along the run.
ModelTrajectory linearized_icl_run(const std::vector<NonlinearTask>& tasks,
                                   const Eigen::VectorXd& theta0);

struct DeepTask {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// Per-layer recursive-least-squares trainer: maintains one Phi per layer
/// over that layer's input features and premultiplies each gradient by
/// lambda*Phi where the projection learner would use P. At beta = 0 the two
/// coincide exactly.
class LayerwiseRls {
 public:
  LayerwiseRls(const Mlp& net, double beta, double lambda);

  void step(Mlp& net, const Eigen::VectorXd& x, const Eigen::VectorXd& y, double gamma);

  /// True (unscaled) Phi of the given layer input, 0-based.
  Eigen::MatrixXd phi(int layer) const;

 private:
  std::vector<Eigen::MatrixXd> Phi_scaled_;
  double log_scale_ = 0.0;
  double next_weight_ = 1.0;
  double beta_;
  double lambda_;
  int t_ = 0;
};

Mlp layerwise_rls_train(Mlp net, const std::vector<DeepTask>& tasks, double beta,
                        double lambda, double gamma);

}  // namespace afcl
