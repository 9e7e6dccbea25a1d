#include "afcl/metrics.hpp"

#include <stdexcept>

#include "afcl/io.hpp"

namespace afcl {

namespace {

void check_shapes(const ModelTrajectory& traj, const TaskStream& stream) {
  if (traj.size() != stream.size() + 1)
    throw std::invalid_argument("error_matrix: trajectory must hold stream length + 1 iterates");
  for (const auto& th : traj)
    if (th.size() != stream.dim)
      throw std::invalid_argument("error_matrix: iterate dimension does not match the stream");
}

double residual(const TaskStream& stream, std::size_t i, const Eigen::VectorXd& theta) {
  if (stream.is_block()) {
    const BlockTask& task = stream.block(i);
    return (task.y - task.X.transpose() * theta).norm();
  }
  const ScalarTask& task = stream.scalar(i);
  return task.y - task.x.dot(theta);
}

}  // namespace

ErrorMatrix error_matrix_serial(const ModelTrajectory& traj, const TaskStream& stream) {
  check_shapes(traj, stream);
  const auto T = static_cast<Eigen::Index>(stream.size());
  ErrorMatrix em;
  em.eps.resize(T, T + 1);
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = 0; j <= T; ++j)
      em.eps(i, j) = residual(stream, static_cast<std::size_t>(i), traj[static_cast<std::size_t>(j)]);
  return em;
}

ErrorMatrix error_matrix(const ModelTrajectory& traj, const TaskStream& stream) {
  check_shapes(traj, stream);
  const auto T = static_cast<Eigen::Index>(stream.size());
  ErrorMatrix em;
  em.eps.resize(T, T + 1);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = 0; j <= T; ++j)
      em.eps(i, j) = residual(stream, static_cast<std::size_t>(i), traj[static_cast<std::size_t>(j)]);
  return em;
}

double mse(const ErrorMatrix& em, int t) {
  if (t < 1 || t > em.tasks()) throw std::invalid_argument("mse: t out of range");
  double acc = 0.0;
  for (int i = 1; i <= t; ++i) acc += em(i, t) * em(i, t);
  return acc / t;
}

double forgetting(const ErrorMatrix& em, int t) {
  if (t < 2 || t > em.tasks())
    throw std::invalid_argument("forgetting: t must lie in [2, T]");
  double acc = 0.0;
  for (int i = 1; i < t; ++i) acc += em(i, t) * em(i, t) - em(i, i) * em(i, i);
  return acc / (t - 1);
}

void write_error_matrix_csv(const ErrorMatrix& em, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"i", "j", "eps"});
  for (int i = 1; i <= em.tasks(); ++i)
    for (int j = 0; j <= em.tasks(); ++j)
      csv.row_strings({std::to_string(i), std::to_string(j), format_double(em(i, j))});
}

void write_metrics_csv(const ErrorMatrix& em, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"t", "mse", "forgetting"});
  for (int t = 1; t <= em.tasks(); ++t) {
    const std::string f = t >= 2 ? format_double(forgetting(em, t)) : std::string();
    csv.row_strings({std::to_string(t), format_double(mse(em, t)), f});
  }
}

}  // namespace afcl
