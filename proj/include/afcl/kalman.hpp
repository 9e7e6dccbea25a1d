#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "afcl/errors.hpp"
#include "afcl/task_stream.hpp"

namespace afcl {

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Beliefs theta_{i|t} = E[theta_i | y_1..y_t] for 1 <= i <= t <= T, plus the
/// one-step predictions theta_{t|t-1}. The filter fills the diagonal and the
/// predictions; each smoother pass back-fills one column. Cells are
/// write-once.
class SmootherTable {
 public:
  SmootherTable(int T, int d);

  int horizon() const { return T_; }
  int dim() const { return d_; }

  bool has(int i, int t) const;
  const GaussianBelief& belief(int i, int t) const;
  const GaussianBelief& predicted(int t) const;  // theta_{t|t-1}; t=1 is the prior
  bool has_predicted(int t) const;

  void set_belief(int i, int t, GaussianBelief b);
  void set_predicted(int t, GaussianBelief b);

  std::vector<Eigen::MatrixXd> kalman_gains;    // K_t at index t-1
  std::vector<Eigen::MatrixXd> backward_gains;  // L_j at index j-1 (filled by smoothing)

 private:
  int T_;
  int d_;
  std::vector<std::optional<GaussianBelief>> grid_;  // (i,t) -> (i-1)*T + t-1
  std::vector<std::optional<GaussianBelief>> pred_;
};

/// Posterior of a Gaussian prior after observing b = X^T a + w, w ~ N(0,
/// noise_cov):
///   mean - Sigma X S^{-1} (X^T mean - b),  cov - Sigma X S^{-1} X^T Sigma,
/// with S = noise_cov + X^T Sigma X. Throws conditioning_error when S is
/// numerically singular.
GaussianBelief gaussian_condition(const GaussianBelief& prior, const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& noise_cov, const Eigen::VectorXd& b);

/// Measurement update via the Kalman gain K = Sigma X (R + X^T Sigma X)^{-1};
/// algebraically identical to gaussian_condition. The gain is exposed for
/// table bookkeeping when gain_out is non-null.
GaussianBelief kf_correct(const GaussianBelief& belief, const BlockTask& task,
                          const Eigen::MatrixXd& R, Eigen::MatrixXd* gain_out = nullptr);

/// Time update: mean A mu, covariance Q + A Sigma A^T.
GaussianBelief kf_predict(const GaussianBelief& belief, const Eigen::MatrixXd& A,
                          const Eigen::MatrixXd& Q);

/// Forward pass over the whole stream: alternates kf_predict / kf_correct and
/// records predictions, filtered beliefs and gains. Scalar tasks are treated
/// as single-sample blocks.
SmootherTable kf_run(const LgmModel& model, const TaskStream& stream);

/// Back-fills theta_{i|t} for i = t-1 .. 1 using the backward gains
///   L_{j-1} = Sigma_{j-1|j-1} A_j^T Sigma_{j|j-1}^{-1}.
/// Requires the filter pass through t. A singular predicted covariance raises
/// smoothing_error unless floor_singular_cov adds 1e-12 I before inverting.
void rts_smooth(SmootherTable& table, const LgmModel& model, int t,
                bool floor_singular_cov = false);

struct KfRlsReport {
  bool pass = true;
  int first_fail_t = -1;
  double max_mean_dev = 0.0;
  double max_cov_dev = 0.0;
};

/// The static-state reduction: a Kalman filter with A = I, Q = 0, prior
/// N(theta1, Phi1) and R_i = beta^i reproduces the weighted recursive
/// least-squares iterates exactly. `tail` holds the tasks after the first,
/// i.e. tail task k carries global index k+1 and noise beta^{k+1}.
KfRlsReport kf_rls_reduction_check(const TaskStream& tail, const Eigen::VectorXd& theta1,
                                   const Eigen::MatrixXd& Phi1, double beta,
                                   double tol = 1e-8);

/// Differentiable vector map with optional analytic Jacobian; when absent the
/// Jacobian is estimated by central differences with step 1e-6 (1 + |theta_k|)
/// per coordinate.
struct NonlinearMap {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> value;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;  // may be empty
};

Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& at);

GaussianBelief ekf_predict(const GaussianBelief& belief, const NonlinearMap& g,
                           const Eigen::MatrixXd& Q);
GaussianBelief ekf_correct(const GaussianBelief& belief, const NonlinearMap& f,
                           const Eigen::MatrixXd& R, const Eigen::VectorXd& y);

/// One predict + correct cycle with g linearized at the current mean and f at
/// the predicted mean.
GaussianBelief ekf_step(const GaussianBelief& belief, const NonlinearMap& g,
                        const NonlinearMap& f, const Eigen::MatrixXd& Q,
                        const Eigen::MatrixXd& R, const Eigen::VectorXd& y);

struct PbtRow {
  int i, s, t;
  double min_eig_diff;  // smallest eigenvalue of Sigma_{i|s} - Sigma_{i|t}
};

struct PbtReport {
  bool pass = true;
  int fail_i = -1, fail_s = -1, fail_t = -1;
  double worst_min_eig = 0.0;  // most negative eigenvalue seen
  std::vector<PbtRow> rows;
};

/// Revisiting a past task with more data never hurts: checks the PSD ordering
/// Sigma_{i|s} >= Sigma_{i|t} for every stored pair i <= s < t, eigenvalue
/// tolerance -1e-9.
PbtReport positive_backward_transfer_check(const SmootherTable& table);

/// CSV `i,t,trace_cov,mean_0..mean_{d-1}`, one row per stored belief.
void write_smoother_csv(const SmootherTable& table, const std::string& path);

/// CSV `i,s,t,min_eig_diff` from a backward-transfer report.
void write_pbt_csv(const PbtReport& report, const std::string& path);

}  // namespace afcl
