#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <string>

#include "afcl/errors.hpp"
#include "afcl/metrics.hpp"
#include "afcl/projection.hpp"
#include "afcl/task_stream.hpp"

namespace afcl {

/// Maps the 1-based task index t to the stepsize used at that step.
using StepsizeSchedule = std::function<double(int)>;

StepsizeSchedule constant_stepsize(double gamma);

/// Stepsize 1 at odd steps and 1/(1-c) at even steps, where c is the squared
/// inner product of the two recurring unit inputs. Drives a 2-recurring
/// stream to the shared solution exactly at task 3. Throws
/// degenerate_task_error unless c lies in [0, 1).
StepsizeSchedule alternating_stepsize_schedule(double c);

/// Plain SGD on the last task only: theta -= gamma_t (x^T theta - y) x.
struct LmsState {
  Eigen::VectorXd theta;
  StepsizeSchedule gamma;
  int t = 0;
};

/// Constant-stepsize LMS; requires 1 - gamma in (-1, 1), the per-task
/// stability range for unit inputs.
LmsState make_lms(int d, double gamma);
/// Scheduled LMS; the schedule may leave the stability range (the alternating
/// schedule does, deliberately).
LmsState make_lms(int d, StepsizeSchedule schedule);

void lms_step(LmsState& state, const ScalarTask& task);

/// Affine-projection state: theta plus a ring of the most recent past tasks.
/// Capacity < 0 keeps every task (the full-memory variant that matches the
/// exact continual learner step for step).
struct ApaState {
  Eigen::VectorXd theta;
  std::deque<ScalarTask> buffer;  // oldest first
  int capacity = 0;
  bool raise_on_dependent = false;  // default: drop dependent rows, newest kept
  int t = 0;
};

ApaState make_apa(int d, int capacity);

/// Projects theta onto the affine set solving the buffered tasks plus the new
/// one, then rotates the buffer. Dependent constraint rows are dropped
/// (newest kept) unless raise_on_dependent is set, in which case a
/// rank_deficiency_error reports the offending singular value.
void apa_step(ApaState& state, const ScalarTask& task);

/// Ideal continual learner: keeps every previous task solved exactly by
/// moving only within the orthogonal complement of past inputs.
struct IclState {
  Eigen::VectorXd theta;
  ProjectorState proj;
  int t = 0;

  explicit IclState(int d) : theta(Eigen::VectorXd::Zero(d)), proj(d) {}
};

IclState make_icl(int d);

/// theta -= ((x^T theta - y)/‖Px‖²) Px, then the projector ingests x.
/// A task whose input lies in the span of its predecessors raises
/// dependent_task_error carrying the a-priori residual y - x^T theta:
/// residual ~ 0 means a redundant repeat, anything else an infeasible stream.
void icl_step(IclState& state, const ScalarTask& task);

/// Orthogonal-gradient descent: like LMS but the gradient is projected onto
/// the complement of past inputs, so old predictions never move.
struct OgdState {
  Eigen::VectorXd theta;
  ProjectorState proj;
  int t = 0;

  explicit OgdState(int d) : theta(Eigen::VectorXd::Zero(d)), proj(d) {}
};

void ogd_step(OgdState& state, const ScalarTask& task, double gamma);

/// Stepsize 1/(x^T P x) that makes ogd_step reproduce icl_step exactly.
/// Throws dependent_task_error when x^T P x vanishes.
double orfit_stepsize(const OgdState& state, const ScalarTask& task);

/// Drive a learner across a whole stream, recording theta^0..theta^T.
ModelTrajectory run_learner(LmsState& state, const TaskStream& stream);
ModelTrajectory run_learner(ApaState& state, const TaskStream& stream);
/// skip_consistent_dependents: a dependent task whose residual is within
/// kDependenceTol is recorded as a no-op step instead of an error.
ModelTrajectory run_learner(IclState& state, const TaskStream& stream,
                            bool skip_consistent_dependents = true);
ModelTrajectory run_learner(OgdState& state, const TaskStream& stream,
                            const StepsizeSchedule& gamma);
/// OGD with the per-step orfit_stepsize (dependent tasks skipped when
/// consistent, mirroring the ideal-continual-learner run).
ModelTrajectory run_learner_orfit(OgdState& state, const TaskStream& stream,
                                  bool skip_consistent_dependents = true);

/// CSV export, header `t,theta_0,...,theta_{d-1}`, one row per iterate.
void write_trajectory_csv(const ModelTrajectory& traj, const std::string& path);

}  // namespace afcl
