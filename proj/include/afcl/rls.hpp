#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "afcl/errors.hpp"
#include "afcl/metrics.hpp"
#include "afcl/task_stream.hpp"

namespace afcl {

/// Inverse of (Phi + X B^{-1} X^T) computed without forming that sum:
/// Phi^{-1} - Phi^{-1} X (B + X^T Phi^{-1} X)^{-1} X^T Phi^{-1}.
/// Both Phi and B must be positive definite.
Eigen::MatrixXd woodbury(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& B);

/// Exponentially-weighted recursive ridge regression. After t tasks, theta
/// minimizes lambda‖θ‖² + Σ_{i≤t} (y_i − x_iᵀθ)²/βⁱ and Phi() is the inverse
/// of that objective's Hessian (up to the factor 2).
///
/// The recursion's running weight βᵗ would leave double range for long
/// streams, so the state stores Phi and the weight divided by a common scale
/// factor; rescaling multiplies the whole objective by a constant and leaves
/// theta untouched. beta = 0 is admitted exactly (every past task weighted
/// infinitely more than the incoming one), which turns the recursion into the
/// ideal-continual-learner update with projector lambda*Phi.
struct RlsState {
  Eigen::VectorXd theta;
  Eigen::MatrixXd Phi_scaled;  // Phi / scale, where log(scale) = log_scale
  double log_scale = 0.0;
  double next_weight = 1.0;  // β^{t+1} / scale, the weight of the next task
  double beta = 1.0;
  double lambda = 1.0;
  int t = 0;
  std::vector<double> condition_history;  // cond(Phi) after each step

  /// The true Phi = exp(log_scale) * Phi_scaled. Throws numeric_range_error
  /// when the scale itself is no longer representable.
  Eigen::MatrixXd Phi() const;
};

/// Fresh state with theta = 0 and Phi = I/lambda. Requires lambda > 0 and
/// beta >= 0.
RlsState make_rls(int d, double beta, double lambda);

/// One rank-one update:
///   theta -= (xᵀθ − y)/(βᵗ + xᵀΦx) · Φx,   Φ -= Φx xᵀΦ/(βᵗ + xᵀΦx).
/// With beta = 0 a task whose input lies in the span of its predecessors has
/// a vanishing denominator and raises dependent_task_error; any non-finite
/// denominator raises numeric_range_error.
void rls_step(RlsState& state, const ScalarTask& task);

/// Dense minimizer of lambda‖θ‖² + Σ_{i≤t} (y_i − x_iᵀθ)²/βⁱ over the first
/// t tasks of the stream; the oracle the recursion is checked against.
/// Requires beta > 0, lambda > 0.
Eigen::VectorXd batch_rls_solve(const TaskStream& stream, std::size_t t, double beta,
                                double lambda);

/// Runs the beta = 0 recursion next to the ideal continual learner and
/// records how far theta and the projector identity P_t = lambda*Phi_t drift
/// at each step, including the empty-stream baseline P_0 = I.
struct RlsIclReport {
  bool pass = true;
  int first_fail_t = -1;   // earliest step breaching a tolerance, -1 if none
  double max_theta_dev = 0.0;
  double max_proj_dev = 0.0;  // max Frobenius norm of P_t - lambda*Phi_t
};

RlsIclReport rls_icl_limit_check(const TaskStream& stream, double lambda,
                                 double theta_tol = 1e-8, double proj_tol = 1e-7);

/// Multi-class RLS whose classifier matrix grows a column the first time a
/// label appears; absent columns behave as zero-padded one-hot targets.
struct DrlsState {
  Eigen::MatrixXd Theta;       // d x c
  Eigen::MatrixXd Phi_scaled;  // shared across columns
  double log_scale = 0.0;
  double next_weight = 1.0;
  double beta = 1.0;
  double lambda = 1.0;
  int t = 0;
  std::vector<int> class_count_log;  // c after each step

  int classes() const { return static_cast<int>(Theta.cols()); }
  Eigen::MatrixXd Phi() const;
};

DrlsState make_drls(int d, double beta, double lambda);

/// Zero-initializes any columns up to `label`, then applies the rank-one
/// update of rls_step to every column at once against the one-hot target.
void drls_step(DrlsState& state, const Eigen::VectorXd& x, int label);

/// Column-growth log, header `t,c_t`.
void write_drls_growth_csv(const DrlsState& state, const std::string& path);

}  // namespace afcl
