#include "afcl/learners.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "afcl/io.hpp"

namespace afcl {

StepsizeSchedule constant_stepsize(double gamma) {
  return [gamma](int) { return gamma; };
}

StepsizeSchedule alternating_stepsize_schedule(double c) {
  if (!(c >= 0.0 && c < 1.0)) {
    std::ostringstream msg;
    msg << "alternating_stepsize_schedule: c = " << c
        << " outside [0, 1); the recurring inputs must not be colinear";
    throw degenerate_task_error(msg.str());
  }
  return [c](int t) { return t % 2 == 1 ? 1.0 : 1.0 / (1.0 - c); };
}

LmsState make_lms(int d, double gamma) {
  if (!(gamma > 0.0 && gamma < 2.0))
    throw std::invalid_argument("make_lms: constant stepsize must lie in (0, 2)");
  return LmsState{Eigen::VectorXd::Zero(d), constant_stepsize(gamma), 0};
}

LmsState make_lms(int d, StepsizeSchedule schedule) {
  return LmsState{Eigen::VectorXd::Zero(d), std::move(schedule), 0};
}

void lms_step(LmsState& state, const ScalarTask& task) {
  if (task.x.size() != state.theta.size())
    throw std::invalid_argument("lms_step: dimension mismatch");
  const double gamma_t = state.gamma(state.t + 1);
  state.theta -= gamma_t * (task.x.dot(state.theta) - task.y) * task.x;
  ++state.t;
}

ApaState make_apa(int d, int capacity) {
  ApaState s;
  s.theta = Eigen::VectorXd::Zero(d);
  s.capacity = capacity;
  return s;
}

void apa_step(ApaState& state, const ScalarTask& task) {
  const Eigen::Index d = state.theta.size();
  if (task.x.size() != d) throw std::invalid_argument("apa_step: dimension mismatch");
  for (const auto& past : state.buffer)
    if (past.x.size() != d) throw std::invalid_argument("apa_step: buffered dimension mismatch");

  if (state.raise_on_dependent && !state.buffer.empty()) {
    Eigen::MatrixXd Xall(d, static_cast<Eigen::Index>(state.buffer.size()) + 1);
    Eigen::Index c = 0;
    for (const auto& past : state.buffer) Xall.col(c++) = past.x;
    Xall.col(c) = task.x;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xall);
    const double smax = svd.singularValues()[0];
    const double smin = svd.singularValues()[svd.singularValues().size() - 1];
    if (smax <= 0.0 || smin < kRankTol * smax) {
      std::ostringstream msg;
      msg << "apa_step: task " << state.t + 1
          << ": constraint block is rank-deficient (singular value " << smin << ")";
      throw rank_deficiency_error(msg.str(), smin);
    }
  }

  // Constraint rows, newest first, so the greedy dependence filter below
  // keeps the newest of any dependent group.
  std::vector<const ScalarTask*> candidates;
  candidates.push_back(&task);
  for (auto it = state.buffer.rbegin(); it != state.buffer.rend(); ++it)
    candidates.push_back(&*it);

  ProjectorState span(static_cast<int>(d));  // spans the kept inputs
  std::vector<const ScalarTask*> kept;
  for (const ScalarTask* cand : candidates)
    if (projector_ingest(span, cand->x)) kept.push_back(cand);

  if (!kept.empty()) {
    Eigen::MatrixXd Xk(d, static_cast<Eigen::Index>(kept.size()));
    Eigen::VectorXd yk(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      Xk.col(static_cast<Eigen::Index>(i)) = kept[i]->x;
      yk[static_cast<Eigen::Index>(i)] = kept[i]->y;
    }
    // theta - X (X^T X)^{-1} (X^T theta - y) via the thin SVD of X.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xk, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd r = Xk.transpose() * state.theta - yk;
    state.theta -= svd.matrixU() *
                   (svd.singularValues().cwiseInverse().asDiagonal() *
                    (svd.matrixV().transpose() * r));
  }

  state.buffer.push_back(task);
  if (state.capacity >= 0)
    while (state.buffer.size() > static_cast<std::size_t>(state.capacity))
      state.buffer.pop_front();
  ++state.t;
}

IclState make_icl(int d) { return IclState(d); }

namespace {

[[noreturn]] void throw_dependent(const char* who, int task_index, double xnorm,
                                  double residual) {
  std::ostringstream msg;
  msg << who << ": task " << task_index << " lies in the span of its predecessors"
      << " (input norm " << xnorm << "); a-priori residual " << residual
      << (std::abs(residual) <= kDependenceTol ? " (consistent repeat)"
                                               : " (infeasible constraints)");
  throw dependent_task_error(msg.str(), residual);
}

}  // namespace

void icl_step(IclState& state, const ScalarTask& task) {
  if (task.x.size() != state.theta.size())
    throw std::invalid_argument("icl_step: dimension mismatch");
  const double xn = task.x.norm();
  const Eigen::VectorXd xb = state.proj.apply(task.x);
  if (xn == 0.0 || xb.norm() / xn < kDependenceTol)
    throw_dependent("icl_step", state.t + 1, xn, task.y - task.x.dot(state.theta));
  state.theta -= ((task.x.dot(state.theta) - task.y) / xb.squaredNorm()) * xb;
  projector_ingest(state.proj, task.x);
  ++state.t;
}

double orfit_stepsize(const OgdState& state, const ScalarTask& task) {
  if (task.x.size() != state.theta.size())
    throw std::invalid_argument("orfit_stepsize: dimension mismatch");
  const double xn = task.x.norm();
  const double q = state.proj.apply(task.x).squaredNorm();  // = x^T P x
  if (xn == 0.0 || std::sqrt(q) / xn < kDependenceTol)
    throw_dependent("orfit_stepsize", state.t + 1, xn, task.y - task.x.dot(state.theta));
  return 1.0 / q;
}

void ogd_step(OgdState& state, const ScalarTask& task, double gamma) {
  if (task.x.size() != state.theta.size())
    throw std::invalid_argument("ogd_step: dimension mismatch");
  state.theta -= gamma * (task.x.dot(state.theta) - task.y) * state.proj.apply(task.x);
  projector_ingest(state.proj, task.x);
  ++state.t;
}

namespace {

void require_scalar(const TaskStream& stream) {
  if (stream.is_block())
    throw std::invalid_argument("run_learner: these learners consume scalar tasks");
}

}  // namespace

ModelTrajectory run_learner(LmsState& state, const TaskStream& stream) {
  require_scalar(stream);
  ModelTrajectory traj{state.theta};
  for (std::size_t t = 0; t < stream.size(); ++t) {
    lms_step(state, stream.scalar(t));
    traj.push_back(state.theta);
  }
  return traj;
}

ModelTrajectory run_learner(ApaState& state, const TaskStream& stream) {
  require_scalar(stream);
  ModelTrajectory traj{state.theta};
  for (std::size_t t = 0; t < stream.size(); ++t) {
    apa_step(state, stream.scalar(t));
    traj.push_back(state.theta);
  }
  return traj;
}

ModelTrajectory run_learner(IclState& state, const TaskStream& stream,
                            bool skip_consistent_dependents) {
  require_scalar(stream);
  ModelTrajectory traj{state.theta};
  for (std::size_t t = 0; t < stream.size(); ++t) {
    try {
      icl_step(state, stream.scalar(t));
    } catch (const dependent_task_error& e) {
      if (!skip_consistent_dependents || std::abs(e.residual()) > kDependenceTol) throw;
      ++state.t;  // the task is consumed as a no-op
    }
    traj.push_back(state.theta);
  }
  return traj;
}

ModelTrajectory run_learner(OgdState& state, const TaskStream& stream,
                            const StepsizeSchedule& gamma) {
  require_scalar(stream);
  ModelTrajectory traj{state.theta};
  for (std::size_t t = 0; t < stream.size(); ++t) {
    ogd_step(state, stream.scalar(t), gamma(state.t + 1));
    traj.push_back(state.theta);
  }
  return traj;
}

ModelTrajectory run_learner_orfit(OgdState& state, const TaskStream& stream,
                                  bool skip_consistent_dependents) {
  require_scalar(stream);
  ModelTrajectory traj{state.theta};
  for (std::size_t t = 0; t < stream.size(); ++t) {
    try {
      const double gamma = orfit_stepsize(state, stream.scalar(t));
      ogd_step(state, stream.scalar(t), gamma);
    } catch (const dependent_task_error& e) {
      if (!skip_consistent_dependents || std::abs(e.residual()) > kDependenceTol) throw;
      ++state.t;
    }
    traj.push_back(state.theta);
  }
  return traj;
}

void write_trajectory_csv(const ModelTrajectory& traj, const std::string& path) {
  if (traj.empty()) throw std::invalid_argument("write_trajectory_csv: empty trajectory");
  const Eigen::Index d = traj.front().size();
  std::vector<std::string> cols{"t"};
  for (Eigen::Index k = 0; k < d; ++k) cols.push_back("theta_" + std::to_string(k));
  CsvWriter csv(path);
  csv.header(cols);
  for (std::size_t t = 0; t < traj.size(); ++t) {
    std::vector<std::string> cells{std::to_string(t)};
    for (Eigen::Index k = 0; k < d; ++k) cells.push_back(format_double(traj[t][k]));
    csv.row_strings(cells);
  }
}

}  // namespace afcl
