#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "afcl/errors.hpp"

namespace afcl {

/// Singular-value ratio below which a matrix is treated as rank-deficient.
inline constexpr double kRankTol = 1e-10;

/// One regression task with a single sample: input x (dimension d), target y.
struct ScalarTask {
  Eigen::VectorXd x;
  double y = 0.0;
};

/// One regression task with m samples: X is d-by-m, y has length m.
struct BlockTask {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

enum class StreamMode { iid_sphere, p_recurring, lgm, explicit_tasks };

std::string to_string(StreamMode m);
StreamMode stream_mode_from_string(const std::string& s);

/// Linear Gaussian model: theta_1 ~ N(mu1, Sigma1), theta_i = A_i theta_{i-1}
/// + w_i for i >= 2 with w_i ~ N(0, Q_i), and y_i = X_i^T theta_i + v_i with
/// v_i ~ N(0, R_i). Each matrix list holds either a single entry (shared by
/// every task) or one entry per task index.
struct LgmModel {
  Eigen::VectorXd mu1;
  Eigen::MatrixXd Sigma1;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> X;
  std::vector<Eigen::MatrixXd> Q;
  std::vector<Eigen::MatrixXd> R;

  int dim() const { return static_cast<int>(mu1.size()); }
  int obs_dim() const { return static_cast<int>(X.front().cols()); }

  const Eigen::MatrixXd& transition(int i) const;   // i >= 2
  const Eigen::MatrixXd& measurement(int i) const;  // i >= 1
  const Eigen::MatrixXd& process_cov(int i) const;  // i >= 2
  const Eigen::MatrixXd& obs_cov(int i) const;      // i >= 1

  /// Checks symmetry (1e-12) and positive semi-definiteness of every
  /// covariance; with require_pd also demands strictly positive eigenvalues.
  /// Throws invalid_model_error on violation.
  void validate(bool require_pd = false) const;
};

/// An ordered task sequence plus the metadata needed to replay and score it.
/// Scalar and block tasks never mix; `mode` selects which container is live.
struct TaskStream {
  StreamMode mode = StreamMode::explicit_tasks;
  std::uint64_t seed = 0;
  int dim = 0;
  std::vector<ScalarTask> scalar_tasks;
  std::vector<BlockTask> block_tasks;
  /// Ground truth: a shared solution for iid-sphere / p-recurring streams...
  std::optional<Eigen::VectorXd> theta_star;
  /// ...or the realized per-task state trajectory for LGM streams.
  std::vector<Eigen::VectorXd> trajectory;

  bool is_block() const { return !block_tasks.empty(); }
  std::size_t size() const { return is_block() ? block_tasks.size() : scalar_tasks.size(); }

  const ScalarTask& scalar(std::size_t t) const { return scalar_tasks.at(t); }
  const BlockTask& block(std::size_t t) const { return block_tasks.at(t); }

  /// Inputs of the first t scalar tasks stacked as a d-by-t matrix.
  Eigen::MatrixXd input_prefix(std::size_t t) const;
  /// Targets of the first t scalar tasks.
  Eigen::VectorXd target_prefix(std::size_t t) const;
};

/// T tasks with x_t uniform on the unit sphere and y_t = x_t^T theta_star.
TaskStream generate_iid_sphere(int d, int T, const Eigen::VectorXd& theta_star,
                               std::uint64_t seed);

/// Cyclic repetition of the base tasks: tasks[t] = base[t mod p]. An optional
/// shared solution may be attached as ground truth.
TaskStream generate_recurring(const std::vector<ScalarTask>& base_tasks, int T,
                              std::optional<Eigen::VectorXd> theta_star = std::nullopt);

/// Wraps hand-specified tasks (mode "explicit").
TaskStream make_explicit(std::vector<ScalarTask> tasks,
                         std::optional<Eigen::VectorXd> theta_star = std::nullopt);

/// Realizes a trajectory and measurements from the model; the realized states
/// are stored as the stream's ground truth.
TaskStream sample_lgm(const LgmModel& model, int T, std::uint64_t seed);

/// Minimum-norm solution of X^T theta = y for a full-column-rank d-by-t X
/// (t <= d). Throws rank_deficiency_error when the smallest singular value
/// falls below kRankTol times the largest.
Eigen::VectorXd min_norm_solution(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

/// Line-delimited JSON serialization: one header record, then one task per
/// line, numbers in shortest round-trip decimal form.
std::string to_jsonl(const TaskStream& stream);
void write_jsonl(const TaskStream& stream, const std::string& path);
TaskStream read_jsonl(std::istream& in);
TaskStream read_jsonl_file(const std::string& path);

/// Symmetric PSD square root used for sampling (tolerates zero covariance).
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov);

}  // namespace afcl
