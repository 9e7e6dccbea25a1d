#pragma once

#include <Eigen/Dense>

namespace afcl {

/// Relative residual ‖P x‖/‖x‖ below which a vector counts as lying in the
/// ingested span already.
inline constexpr double kDependenceTol = 1e-8;

/// Orthonormal basis U of the span of the ingested inputs. The projector onto
/// the orthogonal complement, P = I - U U^T, is never stored densely; apply()
/// evaluates it in O(d·r).
struct ProjectorState {
  Eigen::MatrixXd U;  // d x r with orthonormal columns

  explicit ProjectorState(int d_) : U(d_, 0) {}

  int d() const { return static_cast<int>(U.rows()); }
  int rank() const { return static_cast<int>(U.cols()); }

  /// P x = x - U (U^T x).
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    if (U.cols() == 0) return x;
    return x - U * (U.transpose() * x);
  }

  /// Dense P = I - U U^T, for tests and small-d diagnostics.
  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(U.rows(), U.rows());
    if (U.cols() > 0) P -= U * U.transpose();
    return P;
  }
};

/// Gram-Schmidt ingest with one re-orthogonalization pass (the classic
/// "twice is enough" policy, which keeps U^T U = I over long streams).
/// Returns false and leaves the state untouched when x already lies in the
/// span, i.e. ‖P x‖/‖x‖ < kDependenceTol.
bool projector_ingest(ProjectorState& proj, const Eigen::VectorXd& x);

}  // namespace afcl
