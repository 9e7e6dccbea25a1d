// Timing comparison between the OpenMP kernels and their serial references.
// Build target `bench_parallel`; not part of the test suite.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "afcl/learners.hpp"
#include "afcl/metrics.hpp"
#include "afcl/parallel.hpp"
#include "afcl/rng.hpp"
#include "afcl/task_stream.hpp"

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads = %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP disabled; both variants run serially\n");
#endif

  // Error-matrix fill: T x (T+1) residuals over a long stream.
  const int d = 40, T = 600;
  afcl::Rng rng(7);
  const Eigen::VectorXd theta_star = rng.gaussian(d);
  const afcl::TaskStream stream = afcl::generate_iid_sphere(d, T, theta_star, 11);
  afcl::LmsState lms = afcl::make_lms(d, 1.0);
  const afcl::ModelTrajectory traj = afcl::run_learner(lms, stream);

  auto t0 = std::chrono::steady_clock::now();
  const afcl::ErrorMatrix par = afcl::error_matrix(traj, stream);
  const double t_par = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  const afcl::ErrorMatrix ser = afcl::error_matrix_serial(traj, stream);
  const double t_ser = seconds_since(t0);
  const double dev = (par.eps - ser.eps).cwiseAbs().maxCoeff();
  std::printf("error_matrix   d=%d T=%d   parallel %.4fs  serial %.4fs  speedup %.2fx  max|diff| %.1e\n",
              d, T, t_par, t_ser, t_ser / t_par, dev);

  // Independent trials: many short LMS runs aggregated into per-trial slots.
  const int trials = 2000, dt = 12, Tt = 80;
  std::vector<double> out_par(trials), out_ser(trials);
  auto work = [&](std::vector<double>& out) {
    return [&out, dt, Tt](int i) {
      afcl::Rng trial_rng(afcl::trial_seed(1234, i + 1));
      const Eigen::VectorXd ts = trial_rng.gaussian(dt);
      const afcl::TaskStream s = afcl::generate_iid_sphere(dt, Tt, ts, trial_rng.next_u64());
      afcl::LmsState state = afcl::make_lms(dt, 1.0);
      afcl::run_learner(state, s);
      out[static_cast<std::size_t>(i)] = (state.theta - ts).squaredNorm();
    };
  };
  t0 = std::chrono::steady_clock::now();
  afcl::for_each_trial(trials, work(out_par));
  const double trials_par = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  afcl::for_each_trial_serial(trials, work(out_ser));
  const double trials_ser = seconds_since(t0);
  double trial_dev = 0.0;
  for (int i = 0; i < trials; ++i)
    trial_dev = std::max(trial_dev, std::abs(out_par[static_cast<std::size_t>(i)] -
                                             out_ser[static_cast<std::size_t>(i)]));
  std::printf("trial sweep    n=%d d=%d T=%d  parallel %.4fs  serial %.4fs  speedup %.2fx  max|diff| %.1e\n",
              trials, dt, Tt, trials_par, trials_ser, trials_ser / trials_par, trial_dev);
  return 0;
}
