#include "afcl/kalman.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "afcl/io.hpp"
#include "afcl/rls.hpp"

namespace afcl {

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& M) { return (M + M.transpose()) / 2.0; }

void check_belief(const GaussianBelief& b, const char* who) {
  if (b.cov.rows() != b.mean.size() || b.cov.cols() != b.mean.size())
    throw std::invalid_argument(std::string(who) + ": mean/covariance shape mismatch");
}

}  // namespace

SmootherTable::SmootherTable(int T, int d) : T_(T), d_(d) {
  if (T <= 0 || d <= 0) throw std::invalid_argument("SmootherTable: T and d must be positive");
  grid_.resize(static_cast<std::size_t>(T) * static_cast<std::size_t>(T));
  pred_.resize(static_cast<std::size_t>(T));
  kalman_gains.resize(static_cast<std::size_t>(T));
  backward_gains.resize(static_cast<std::size_t>(T));
}

namespace {
std::size_t cell(int i, int t, int T) {
  if (i < 1 || t < 1 || i > t || t > T)
    throw std::out_of_range("SmootherTable: cell (" + std::to_string(i) + ", " +
                            std::to_string(t) + ") outside the triangle");
  return static_cast<std::size_t>(i - 1) * static_cast<std::size_t>(T) +
         static_cast<std::size_t>(t - 1);
}
}  // namespace

bool SmootherTable::has(int i, int t) const { return grid_[cell(i, t, T_)].has_value(); }

const GaussianBelief& SmootherTable::belief(int i, int t) const {
  const auto& slot = grid_[cell(i, t, T_)];
  if (!slot)
    throw std::out_of_range("SmootherTable: belief (" + std::to_string(i) + ", " +
                            std::to_string(t) + ") not computed");
  return *slot;
}

bool SmootherTable::has_predicted(int t) const {
  return t >= 1 && t <= T_ && pred_[static_cast<std::size_t>(t - 1)].has_value();
}

const GaussianBelief& SmootherTable::predicted(int t) const {
  if (!has_predicted(t))
    throw std::out_of_range("SmootherTable: prediction for t = " + std::to_string(t) +
                            " not computed");
  return *pred_[static_cast<std::size_t>(t - 1)];
}

void SmootherTable::set_belief(int i, int t, GaussianBelief b) {
  auto& slot = grid_[cell(i, t, T_)];
  if (slot)
    throw std::logic_error("SmootherTable: belief (" + std::to_string(i) + ", " +
                           std::to_string(t) + ") already set");
  slot = std::move(b);
}

void SmootherTable::set_predicted(int t, GaussianBelief b) {
  if (t < 1 || t > T_) throw std::out_of_range("SmootherTable: prediction index out of range");
  auto& slot = pred_[static_cast<std::size_t>(t - 1)];
  if (slot) throw std::logic_error("SmootherTable: prediction already set");
  slot = std::move(b);
}

GaussianBelief gaussian_condition(const GaussianBelief& prior, const Eigen::MatrixXd& X,
                                  const Eigen::MatrixXd& noise_cov, const Eigen::VectorXd& b) {
  check_belief(prior, "gaussian_condition");
  if (X.rows() != prior.mean.size() || X.cols() != b.size() || noise_cov.rows() != b.size() ||
      noise_cov.cols() != b.size())
    throw std::invalid_argument("gaussian_condition: observation shapes disagree");
  const Eigen::MatrixXd SigmaX = prior.cov * X;
  const Eigen::MatrixXd S = symmetrized(noise_cov + X.transpose() * SigmaX);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw conditioning_error("gaussian_condition: innovation covariance is numerically singular");
  GaussianBelief post;
  post.mean = prior.mean - SigmaX * llt.solve(X.transpose() * prior.mean - b);
  post.cov = symmetrized(prior.cov - SigmaX * llt.solve(SigmaX.transpose()));
  return post;
}

GaussianBelief kf_correct(const GaussianBelief& belief, const BlockTask& task,
                          const Eigen::MatrixXd& R, Eigen::MatrixXd* gain_out) {
  check_belief(belief, "kf_correct");
  if (task.X.rows() != belief.mean.size() || task.y.size() != task.X.cols())
    throw std::invalid_argument("kf_correct: task shapes disagree");
  const Eigen::MatrixXd SigmaX = belief.cov * task.X;
  const Eigen::MatrixXd S = symmetrized(R + task.X.transpose() * SigmaX);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw conditioning_error("kf_correct: innovation covariance is numerically singular");
  const Eigen::MatrixXd K = llt.solve(SigmaX.transpose()).transpose();
  if (gain_out) *gain_out = K;
  GaussianBelief post;
  post.mean = belief.mean - K * (task.X.transpose() * belief.mean - task.y);
  post.cov = symmetrized(belief.cov - K * SigmaX.transpose());
  return post;
}

GaussianBelief kf_predict(const GaussianBelief& belief, const Eigen::MatrixXd& A,
                          const Eigen::MatrixXd& Q) {
  check_belief(belief, "kf_predict");
  if (A.rows() != belief.mean.size() || A.cols() != belief.mean.size() ||
      Q.rows() != belief.mean.size() || Q.cols() != belief.mean.size())
    throw std::invalid_argument("kf_predict: A/Q shapes disagree");
  return {A * belief.mean, symmetrized(Q + A * belief.cov * A.transpose())};
}

namespace {

BlockTask as_block(const TaskStream& stream, std::size_t t) {
  if (stream.is_block()) return stream.block(t);
  const ScalarTask& s = stream.scalar(t);
  BlockTask b;
  b.X = s.x;
  b.y = Eigen::VectorXd::Constant(1, s.y);
  return b;
}

}  // namespace

SmootherTable kf_run(const LgmModel& model, const TaskStream& stream) {
  model.validate();
  const int T = static_cast<int>(stream.size());
  const int d = model.dim();
  if (stream.dim != d) throw std::invalid_argument("kf_run: stream dimension differs from model");
  SmootherTable table(T, d);
  GaussianBelief belief{model.mu1, model.Sigma1};
  for (int t = 1; t <= T; ++t) {
    if (t >= 2) belief = kf_predict(belief, model.transition(t), model.process_cov(t));
    table.set_predicted(t, belief);
    const BlockTask task = as_block(stream, static_cast<std::size_t>(t - 1));
    if (task.X.cols() != model.obs_cov(t).rows())
      throw std::invalid_argument("kf_run: task sample count differs from the noise model");
    Eigen::MatrixXd gain;
    belief = kf_correct(belief, task, model.obs_cov(t), &gain);
    table.kalman_gains[static_cast<std::size_t>(t - 1)] = gain;
    table.set_belief(t, t, belief);
  }
  return table;
}

void rts_smooth(SmootherTable& table, const LgmModel& model, int t, bool floor_singular_cov) {
  if (t < 1 || t > table.horizon()) throw std::invalid_argument("rts_smooth: horizon out of range");
  for (int j = 1; j <= t; ++j)
    if (!table.has(j, j) || !table.has_predicted(j))
      throw smoothing_error("rts_smooth: filter pass incomplete at step " + std::to_string(j));
  for (int j = t; j >= 2; --j) {
    const GaussianBelief& pred = table.predicted(j);       // theta_{j|j-1}
    const GaussianBelief& filt = table.belief(j - 1, j - 1);
    const GaussianBelief& ahead = table.belief(j, t);      // theta_{j|t}
    Eigen::MatrixXd Sp = pred.cov;
    Eigen::LLT<Eigen::MatrixXd> llt(Sp);
    if (llt.info() != Eigen::Success) {
      if (!floor_singular_cov)
        throw smoothing_error("rts_smooth: predicted covariance at step " + std::to_string(j) +
                              " is singular; rerun with the covariance floor enabled");
      Sp += 1e-12 * Eigen::MatrixXd::Identity(Sp.rows(), Sp.cols());
      llt.compute(Sp);
      if (llt.info() != Eigen::Success)
        throw smoothing_error("rts_smooth: predicted covariance at step " + std::to_string(j) +
                              " is singular even with the floor");
    }
    // L_{j-1} = Sigma_{j-1|j-1} A_j^T Sigma_{j|j-1}^{-1}, via the LLT solve on
    // the symmetric right factor.
    const Eigen::MatrixXd L =
        llt.solve(model.transition(j) * filt.cov.transpose()).transpose();
    table.backward_gains[static_cast<std::size_t>(j - 2)] = L;
    GaussianBelief sm;
    sm.mean = filt.mean + L * (ahead.mean - pred.mean);
    sm.cov = symmetrized(filt.cov + L * (ahead.cov - pred.cov) * L.transpose());
    table.set_belief(j - 1, t, std::move(sm));
  }
}

KfRlsReport kf_rls_reduction_check(const TaskStream& tail, const Eigen::VectorXd& theta1,
                                   const Eigen::MatrixXd& Phi1, double beta, double tol) {
  if (tail.is_block())
    throw std::invalid_argument("kf_rls_reduction_check: scalar tasks expected");
  if (beta <= 0.0)
    throw std::invalid_argument("kf_rls_reduction_check: beta must be positive");
  RlsState rls;
  rls.theta = theta1;
  rls.Phi_scaled = Phi1;
  rls.beta = beta;
  rls.lambda = 1.0;  // unused when beta > 0
  rls.t = 1;
  rls.next_weight = beta * beta;  // the next task carries global index 2
  GaussianBelief belief{theta1, Phi1};
  KfRlsReport report;
  double r = beta;  // becomes beta^{k+2}, the noise variance of tail task k
  for (std::size_t k = 0; k < tail.size(); ++k) {
    r *= beta;
    const ScalarTask& task = tail.scalar(k);
    rls_step(rls, task);
    BlockTask obs;
    obs.X = task.x;
    obs.y = Eigen::VectorXd::Constant(1, task.y);
    // Static state: the prediction step is the identity with no noise.
    belief = kf_correct(belief, obs, Eigen::MatrixXd::Constant(1, 1, r));
    const double mean_dev = (belief.mean - rls.theta).cwiseAbs().maxCoeff();
    const double cov_dev = (belief.cov - rls.Phi()).cwiseAbs().maxCoeff();
    report.max_mean_dev = std::max(report.max_mean_dev, mean_dev);
    report.max_cov_dev = std::max(report.max_cov_dev, cov_dev);
    if ((mean_dev > tol || cov_dev > tol) && report.pass) {
      report.pass = false;
      report.first_fail_t = static_cast<int>(k) + 2;
    }
  }
  return report;
}

Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& at) {
  const Eigen::Index d = at.size();
  Eigen::VectorXd probe = at;
  Eigen::MatrixXd J;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double h = 1e-6 * (1.0 + std::abs(at[k]));
    probe[k] = at[k] + h;
    const Eigen::VectorXd up = f(probe);
    probe[k] = at[k] - h;
    const Eigen::VectorXd down = f(probe);
    probe[k] = at[k];
    if (J.size() == 0) J.resize(up.size(), d);
    J.col(k) = (up - down) / (2.0 * h);
  }
  return J;
}

namespace {
Eigen::MatrixXd jacobian_of(const NonlinearMap& m, const Eigen::VectorXd& at) {
  return m.jacobian ? m.jacobian(at) : fd_jacobian(m.value, at);
}
}  // namespace

GaussianBelief ekf_predict(const GaussianBelief& belief, const NonlinearMap& g,
                           const Eigen::MatrixXd& Q) {
  check_belief(belief, "ekf_predict");
  const Eigen::MatrixXd G = jacobian_of(g, belief.mean);
  GaussianBelief out;
  out.mean = g.value(belief.mean);
  out.cov = symmetrized(Q + G * belief.cov * G.transpose());
  return out;
}

GaussianBelief ekf_correct(const GaussianBelief& belief, const NonlinearMap& f,
                           const Eigen::MatrixXd& R, const Eigen::VectorXd& y) {
  check_belief(belief, "ekf_correct");
  const Eigen::MatrixXd F = jacobian_of(f, belief.mean);  // m x d
  const Eigen::MatrixXd SigmaX = belief.cov * F.transpose();
  const Eigen::MatrixXd S = symmetrized(R + F * SigmaX);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw conditioning_error("ekf_correct: innovation covariance is numerically singular");
  const Eigen::MatrixXd K = llt.solve(SigmaX.transpose()).transpose();
  GaussianBelief post;
  post.mean = belief.mean - K * (f.value(belief.mean) - y);
  post.cov = symmetrized(belief.cov - K * SigmaX.transpose());
  return post;
}

GaussianBelief ekf_step(const GaussianBelief& belief, const NonlinearMap& g,
                        const NonlinearMap& f, const Eigen::MatrixXd& Q,
                        const Eigen::MatrixXd& R, const Eigen::VectorXd& y) {
  return ekf_correct(ekf_predict(belief, g, Q), f, R, y);
}

PbtReport positive_backward_transfer_check(const SmootherTable& table) {
  PbtReport report;
  const int T = table.horizon();
  for (int i = 1; i <= T; ++i)
    for (int s = i; s <= T; ++s) {
      if (!table.has(i, s)) continue;
      for (int t = s + 1; t <= T; ++t) {
        if (!table.has(i, t)) continue;
        const Eigen::MatrixXd diff = table.belief(i, s).cov - table.belief(i, t).cov;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(diff),
                                                          Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        report.rows.push_back({i, s, t, lo});
        report.worst_min_eig = std::min(report.worst_min_eig, lo);
        if (lo < -1e-9 && report.pass) {
          report.pass = false;
          report.fail_i = i;
          report.fail_s = s;
          report.fail_t = t;
        }
      }
    }
  return report;
}

void write_smoother_csv(const SmootherTable& table, const std::string& path) {
  const int d = table.dim();
  std::vector<std::string> cols{"i", "t", "trace_cov"};
  for (int k = 0; k < d; ++k) cols.push_back("mean_" + std::to_string(k));
  CsvWriter csv(path);
  csv.header(cols);
  for (int i = 1; i <= table.horizon(); ++i)
    for (int t = i; t <= table.horizon(); ++t) {
      if (!table.has(i, t)) continue;
      const GaussianBelief& b = table.belief(i, t);
      std::vector<std::string> cells{std::to_string(i), std::to_string(t),
                                     format_double(b.cov.trace())};
      for (int k = 0; k < d; ++k) cells.push_back(format_double(b.mean[k]));
      csv.row_strings(cells);
    }
}

void write_pbt_csv(const PbtReport& report, const std::string& path) {
  CsvWriter csv(path);
  csv.header({"i", "s", "t", "min_eig_diff"});
  for (const PbtRow& row : report.rows)
    csv.row_strings({std::to_string(row.i), std::to_string(row.s), std::to_string(row.t),
                     format_double(row.min_eig_diff)});
}

}  // namespace afcl
