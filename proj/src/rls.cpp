#include "afcl/rls.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "afcl/io.hpp"
#include "afcl/learners.hpp"

namespace afcl {

namespace {

constexpr double kRescaleLo = 1e-100;
constexpr double kRescaleHi = 1e100;

void require_pd(const Eigen::MatrixXd& M, const char* what) {
  if (M.rows() != M.cols()) throw std::invalid_argument(std::string(what) + " is not square");
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, M.cwiseAbs().maxCoeff()))
    throw std::invalid_argument(std::string(what) + " is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) + " is not positive definite");
}

/// Rank-one Phi downdate shared by the scalar and multi-class recursions.
/// On entry Phix and denom already belong to the pre-update Phi.
void phi_downdate(Eigen::MatrixXd& Phi, const Eigen::VectorXd& Phix, double denom) {
  Phi -= (Phix * Phix.transpose()) / denom;
  Phi = ((Phi + Phi.transpose()) / 2.0).eval();  // keep symmetry against rounding
}

void advance_weight(double& next_weight, double& log_scale, Eigen::MatrixXd& Phi,
                    double beta) {
  if (beta == 0.0) return;  // the weight stays at exact zero, nothing to rescale
  next_weight *= beta;
  if (next_weight > kRescaleLo && next_weight < kRescaleHi) return;
  // Multiply the whole objective by 1/next_weight; the minimizer is invariant.
  const double f = next_weight;
  log_scale += std::log(f);
  Phi /= f;
  next_weight = 1.0;
}

double record_condition(const Eigen::MatrixXd& Phi, std::vector<double>& history) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Phi, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  history.push_back(cond);
  return cond;
}

Eigen::MatrixXd unscale_phi(const Eigen::MatrixXd& Phi_scaled, double log_scale) {
  const double s = std::exp(log_scale);
  if (s == 0.0 || !std::isfinite(s))
    throw numeric_range_error("RLS: accumulated weight scale exp(" + std::to_string(log_scale) +
                              ") is not representable");
  Eigen::MatrixXd Phi = s * Phi_scaled;
  if (!Phi.allFinite())
    throw numeric_range_error("RLS: Phi overflows when unscaled");
  return Phi;
}

[[noreturn]] void throw_rls_dependent(int task_index, double residual) {
  std::ostringstream msg;
  msg << "rls_step: beta = 0 and task " << task_index
      << " lies in the span of its predecessors; a-priori residual " << residual;
  throw dependent_task_error(msg.str(), residual);
}

}  // namespace

Eigen::MatrixXd woodbury(const Eigen::MatrixXd& Phi, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& B) {
  require_pd(Phi, "woodbury: Phi");
  require_pd(B, "woodbury: B");
  if (X.rows() != Phi.rows() || X.cols() != B.rows())
    throw std::invalid_argument("woodbury: X shape does not match Phi and B");
  const Eigen::MatrixXd Phi_inv =
      Phi.llt().solve(Eigen::MatrixXd::Identity(Phi.rows(), Phi.rows()));
  const Eigen::MatrixXd PiX = Phi_inv * X;
  const Eigen::MatrixXd inner = B + X.transpose() * PiX;
  return Phi_inv - PiX * inner.llt().solve(PiX.transpose());
}

Eigen::MatrixXd RlsState::Phi() const { return unscale_phi(Phi_scaled, log_scale); }

RlsState make_rls(int d, double beta, double lambda) {
  if (d <= 0) throw std::invalid_argument("make_rls: d must be positive");
  if (lambda <= 0.0) throw std::invalid_argument("make_rls: lambda must be positive");
  if (beta < 0.0) throw std::invalid_argument("make_rls: beta must be nonnegative");
  RlsState s;
  s.theta = Eigen::VectorXd::Zero(d);
  // Store Phi at scale lambda so the matrix starts at I regardless of lambda;
  // entries of order 1/lambda would otherwise quantize at ulp(1/lambda),
  // which for small lambda swamps eigenvalue-level properties of Phi.
  s.Phi_scaled = Eigen::MatrixXd::Identity(d, d);
  s.log_scale = -std::log(lambda);
  s.beta = beta;
  s.lambda = lambda;
  s.next_weight = beta * lambda;  // the first task enters with weight beta^1
  return s;
}

void rls_step(RlsState& state, const ScalarTask& task) {
  if (task.x.size() != state.theta.size())
    throw std::invalid_argument("rls_step: dimension mismatch");
  const Eigen::VectorXd Phix = state.Phi_scaled * task.x;
  const double q = task.x.dot(Phix);
  if (state.beta == 0.0) {
    // Here lambda*Phi acts as the projector onto unseen directions; a task
    // inside the seen span has q ~ 0 and no well-defined update. q is in the
    // stored scale, so undo it before comparing against the unit-free ratio.
    const double xn = task.x.norm();
    const double q_true = std::max(q, 0.0) * std::exp(state.log_scale);
    if (xn == 0.0 || std::sqrt(q_true * state.lambda) / xn < kDependenceTol)
      throw_rls_dependent(state.t + 1, task.y - task.x.dot(state.theta));
  }
  const double denom = state.next_weight + q;
  if (!std::isfinite(denom) || denom <= 0.0)
    throw numeric_range_error("rls_step: task " + std::to_string(state.t + 1) +
                              ": denominator " + std::to_string(denom) +
                              " is outside the representable range");
  state.theta -= ((task.x.dot(state.theta) - task.y) / denom) * Phix;
  phi_downdate(state.Phi_scaled, Phix, denom);
  record_condition(state.Phi_scaled, state.condition_history);
  ++state.t;
  advance_weight(state.next_weight, state.log_scale, state.Phi_scaled, state.beta);
}

Eigen::VectorXd batch_rls_solve(const TaskStream& stream, std::size_t t, double beta,
                                double lambda) {
  if (beta <= 0.0 || lambda <= 0.0)
    throw std::invalid_argument("batch_rls_solve: beta and lambda must be positive");
  if (t > stream.size()) throw std::invalid_argument("batch_rls_solve: prefix longer than stream");
  if (stream.is_block())
    throw std::invalid_argument("batch_rls_solve: scalar tasks expected");
  const Eigen::Index d = stream.dim;
  // Weight of task i is beta^{-i}; shift all log-weights so the largest is 1,
  // which scales the objective by a constant and keeps the sums in range.
  const double lb = std::log(beta);
  double max_logw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i <= t; ++i)
    max_logw = std::max(max_logw, -static_cast<double>(i) * lb);
  if (t == 0) max_logw = 0.0;
  Eigen::MatrixXd A = (lambda * std::exp(-max_logw)) * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 1; i <= t; ++i) {
    const ScalarTask& task = stream.scalar(i - 1);
    const double w = std::exp(-static_cast<double>(i) * lb - max_logw);
    A += w * (task.x * task.x.transpose());
    b += w * task.y * task.x;
  }
  return A.ldlt().solve(b);
}

RlsIclReport rls_icl_limit_check(const TaskStream& stream, double lambda,
                                 double theta_tol, double proj_tol) {
  if (stream.is_block())
    throw std::invalid_argument("rls_icl_limit_check: scalar tasks expected");
  const int d = stream.dim;
  RlsState rls = make_rls(d, 0.0, lambda);
  IclState icl = make_icl(d);
  RlsIclReport report;
  auto measure = [&](int t) {
    const double theta_dev = (rls.theta - icl.theta).cwiseAbs().maxCoeff();
    const double proj_dev = (icl.proj.dense() - lambda * rls.Phi()).norm();
    report.max_theta_dev = std::max(report.max_theta_dev, theta_dev);
    report.max_proj_dev = std::max(report.max_proj_dev, proj_dev);
    if ((theta_dev > theta_tol || proj_dev > proj_tol) && report.pass) {
      report.pass = false;
      report.first_fail_t = t;
    }
  };
  measure(0);  // P_0 = I and Phi_0 = I/lambda must already agree
  for (std::size_t t = 0; t < stream.size(); ++t) {
    rls_step(rls, stream.scalar(t));
    icl_step(icl, stream.scalar(t));
    measure(static_cast<int>(t) + 1);
  }
  return report;
}

Eigen::MatrixXd DrlsState::Phi() const { return unscale_phi(Phi_scaled, log_scale); }

DrlsState make_drls(int d, double beta, double lambda) {
  if (d <= 0) throw std::invalid_argument("make_drls: d must be positive");
  if (lambda <= 0.0) throw std::invalid_argument("make_drls: lambda must be positive");
  if (beta < 0.0) throw std::invalid_argument("make_drls: beta must be nonnegative");
  DrlsState s;
  s.Theta.resize(d, 0);
  s.Phi_scaled = Eigen::MatrixXd::Identity(d, d);  // scale lambda, as in make_rls
  s.log_scale = -std::log(lambda);
  s.beta = beta;
  s.lambda = lambda;
  s.next_weight = beta * lambda;
  return s;
}

void drls_step(DrlsState& state, const Eigen::VectorXd& x, int label) {
  if (x.size() != state.Phi_scaled.rows())
    throw std::invalid_argument("drls_step: dimension mismatch");
  if (label < 0) throw std::invalid_argument("drls_step: label must be nonnegative");
  if (label >= state.classes()) {
    const Eigen::Index old = state.Theta.cols();
    state.Theta.conservativeResize(Eigen::NoChange, label + 1);
    state.Theta.rightCols(state.Theta.cols() - old).setZero();
  }
  const Eigen::VectorXd Phix = state.Phi_scaled * x;
  const double q = x.dot(Phix);
  const double denom = state.next_weight + q;
  if (!std::isfinite(denom) || denom <= 0.0)
    throw numeric_range_error("drls_step: task " + std::to_string(state.t + 1) +
                              ": denominator " + std::to_string(denom) +
                              " is outside the representable range");
  Eigen::RowVectorXd resid = x.transpose() * state.Theta;  // x^T Theta - y^T
  resid[label] -= 1.0;
  state.Theta -= (Phix * resid) / denom;
  phi_downdate(state.Phi_scaled, Phix, denom);
  ++state.t;
  state.class_count_log.push_back(state.classes());
  advance_weight(state.next_weight, state.log_scale, state.Phi_scaled, state.beta);
}

void write_drls_growth_csv(const DrlsState& state, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"t", "c_t"});
  for (std::size_t t = 0; t < state.class_count_log.size(); ++t)
    csv.row_strings({std::to_string(t + 1), std::to_string(state.class_count_log[t])});
}

}  // namespace afcl
