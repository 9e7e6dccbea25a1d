#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "afcl/task_stream.hpp"

namespace afcl {

/// Model iterates theta^0..theta^T, one per column of the stream's timeline.
using ModelTrajectory = std::vector<Eigen::VectorXd>;

/// Signed residuals eps_ij = y_i - x_i^T theta^j for every task i = 1..T and
/// every iterate j = 0..T. Column 0 scores the initial model, so a-priori
/// errors live on the (i, i-1) entries and the usual evaluation grid starts
/// at column 1. Block tasks store the residual 2-norm instead.
struct ErrorMatrix {
  Eigen::MatrixXd eps;  // row i-1 <-> task i, column j <-> iterate j

  int tasks() const { return static_cast<int>(eps.rows()); }
  double operator()(int i, int j) const { return eps(i - 1, j); }
};

/// Fills the full T-by-(T+1) residual grid. Entries are independent, so rows
/// are distributed across OpenMP threads when available.
ErrorMatrix error_matrix(const ModelTrajectory& traj, const TaskStream& stream);

/// Single-threaded reference used to cross-check the parallel fill.
ErrorMatrix error_matrix_serial(const ModelTrajectory& traj, const TaskStream& stream);

/// E_t: mean squared error of iterate t over tasks 1..t.
double mse(const ErrorMatrix& em, int t);

/// F_t: mean change in squared error on past tasks, (1/(t-1)) * sum_{i<t}
/// (eps_it^2 - eps_ii^2). Signed: negative values mean backward transfer.
double forgetting(const ErrorMatrix& em, int t);

/// One row per entry, header `i,j,eps`.
void write_error_matrix_csv(const ErrorMatrix& em, const std::string& path);

/// Header `t,mse,forgetting`; the forgetting cell is empty at t=1 where the
/// quantity is undefined.
void write_metrics_csv(const ErrorMatrix& em, const std::string& path);

}  // namespace afcl
