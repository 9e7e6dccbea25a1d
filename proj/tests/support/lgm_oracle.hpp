#pragma once

// Brute-force reference for linear-Gaussian state estimation, used only by
// tests. The filter/smoother answers are checked against materializing the
// joint Gaussian of (theta_1, ..., theta_T) and conditioning it on the stacked
// observations in one dense solve. O((T d)^3) and proud of it.

#include <Eigen/Dense>

#include "afcl/kalman.hpp"
#include "afcl/task_stream.hpp"

namespace afcl::test_support {

struct JointGaussian {
  Eigen::VectorXd mu;     // length T*d, blocks are the per-task state means
  Eigen::MatrixXd Sigma;  // T*d x T*d block covariance
};

inline JointGaussian lgm_joint_prior(const LgmModel& model, int T) {
  const int d = model.dim();
  JointGaussian j;
  j.mu.resize(T * d);
  j.Sigma.setZero(T * d, T * d);
  j.mu.segment(0, d) = model.mu1;
  j.Sigma.block(0, 0, d, d) = model.Sigma1;
  for (int i = 2; i <= T; ++i) {
    const Eigen::MatrixXd& A = model.transition(i);
    j.mu.segment((i - 1) * d, d) = A * j.mu.segment((i - 2) * d, d);
    // Cov(theta_i, theta_k) = A_i Cov(theta_{i-1}, theta_k) for k < i
    for (int k = 1; k < i; ++k) {
      j.Sigma.block((i - 1) * d, (k - 1) * d, d, d) =
          A * j.Sigma.block((i - 2) * d, (k - 1) * d, d, d);
      j.Sigma.block((k - 1) * d, (i - 1) * d, d, d) =
          j.Sigma.block((i - 1) * d, (k - 1) * d, d, d).transpose();
    }
    j.Sigma.block((i - 1) * d, (i - 1) * d, d, d) =
        A * j.Sigma.block((i - 2) * d, (i - 2) * d, d, d) * A.transpose() +
        model.process_cov(i);
  }
  return j;
}

/// Posterior of theta_i given y_1..y_t (both 1-based), by dense conditioning.
/// The stream must carry the model's block tasks.
inline GaussianBelief lgm_condition_oracle(const LgmModel& model, const TaskStream& stream,
                                           int T, int i, int t) {
  const int d = model.dim();
  const JointGaussian j = lgm_joint_prior(model, T);

  int rows = 0;
  for (int k = 1; k <= t; ++k) rows += static_cast<int>(model.measurement(k).cols());
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(rows, T * d);
  Eigen::VectorXd y(rows);
  Eigen::MatrixXd Rn = Eigen::MatrixXd::Zero(rows, rows);
  int at = 0;
  for (int k = 1; k <= t; ++k) {
    const Eigen::MatrixXd& X = model.measurement(k);
    const int m = static_cast<int>(X.cols());
    C.block(at, (k - 1) * d, m, d) = X.transpose();
    y.segment(at, m) = stream.block(k - 1).y;
    Rn.block(at, at, m, m) = model.obs_cov(k);
    at += m;
  }

  const Eigen::MatrixXd S = C * j.Sigma * C.transpose() + Rn;
  const Eigen::MatrixXd K = j.Sigma * C.transpose() * S.llt().solve(
      Eigen::MatrixXd::Identity(rows, rows));
  const Eigen::VectorXd post_mu = j.mu + K * (y - C * j.mu);
  const Eigen::MatrixXd post_Sigma = j.Sigma - K * C * j.Sigma;

  GaussianBelief b;
  b.mean = post_mu.segment((i - 1) * d, d);
  b.cov = post_Sigma.block((i - 1) * d, (i - 1) * d, d, d);
  return b;
}

}  // namespace afcl::test_support
