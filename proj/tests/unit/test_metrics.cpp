#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "afcl/learners.hpp"
#include "afcl/metrics.hpp"
#include "afcl/rng.hpp"
#include "afcl/task_stream.hpp"

using namespace afcl;

namespace {

TaskStream two_task_fixture() {
  std::vector<ScalarTask> tasks(2);
  tasks[0].x = Eigen::VectorXd::Constant(1, 2.0);
  tasks[0].y = 4.0;
  tasks[1].x = Eigen::VectorXd::Constant(1, 1.0);
  tasks[1].y = 1.0;
  return make_explicit(tasks);
}

}  // namespace

TEST_CASE("error matrix holds signed a-posteriori residuals") {
  // traj: theta^0 = 0, theta^1 = 1, theta^2 = 1.5 on the (2,4),(1,1) tasks
  ModelTrajectory traj{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 1.0),
                       Eigen::VectorXd::Constant(1, 1.5)};
  const ErrorMatrix em = error_matrix(traj, two_task_fixture());
  REQUIRE(em.tasks() == 2);
  CHECK(em(1, 0) == 4.0);        // y1 - x1*0
  CHECK(em(1, 1) == 2.0);        // 4 - 2*1
  CHECK(em(1, 2) == 1.0);        // 4 - 2*1.5
  CHECK(em(2, 1) == 0.0);        // 1 - 1*1
  CHECK(em(2, 2) == -0.5);       // 1 - 1*1.5

  // E_t averages squared residuals of the column, F_t subtracts the diagonal
  CHECK(mse(em, 1) == doctest::Approx(4.0));
  CHECK(mse(em, 2) == doctest::Approx((1.0 + 0.25) / 2.0));
  CHECK(forgetting(em, 2) == doctest::Approx(1.0 - 4.0));
}

TEST_CASE("metric accessors reject out-of-range arguments") {
  ModelTrajectory traj{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  std::vector<ScalarTask> tasks(1);
  tasks[0].x = Eigen::VectorXd::Constant(1, 1.0);
  tasks[0].y = 1.0;
  const ErrorMatrix em = error_matrix(traj, make_explicit(tasks));
  CHECK_THROWS_AS(mse(em, 0), std::invalid_argument);
  CHECK_THROWS_AS(mse(em, 2), std::invalid_argument);
  CHECK_THROWS_AS(forgetting(em, 1), std::invalid_argument);  // needs t >= 2
}

TEST_CASE("trajectory length must be one more than the stream") {
  ModelTrajectory traj{Eigen::VectorXd::Zero(1)};
  CHECK_THROWS_AS(error_matrix(traj, two_task_fixture()), std::invalid_argument);
}

TEST_CASE("parallel and serial error-matrix fills agree exactly") {
  Rng rng(17);
  const Eigen::VectorXd theta_star = rng.gaussian(8);
  const TaskStream stream = generate_iid_sphere(8, 60, theta_star, 3);
  LmsState lms = make_lms(8, 0.9);
  const ModelTrajectory traj = run_learner(lms, stream);
  const ErrorMatrix par = error_matrix(traj, stream);
  const ErrorMatrix ser = error_matrix_serial(traj, stream);
  CHECK((par.eps - ser.eps).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("block-task residuals enter as 2-norms") {
  TaskStream stream;
  stream.mode = StreamMode::explicit_tasks;
  stream.dim = 2;
  BlockTask task;
  task.X = Eigen::MatrixXd::Identity(2, 2);
  task.y = Eigen::Vector2d(3.0, 4.0);
  stream.block_tasks.push_back(task);
  ModelTrajectory traj{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)};
  const ErrorMatrix em = error_matrix(traj, stream);
  CHECK(em(1, 0) == doctest::Approx(5.0));  // ||(3,4)||
}

TEST_CASE("forgetting is bounded by mse when the diagonal vanishes") {
  // An interpolating learner drives the diagonal to zero, which forces
  // F_t = t/(t-1) * E_t exactly.
  Rng rng(23);
  const Eigen::VectorXd theta_star = rng.gaussian(6);
  const TaskStream stream = generate_iid_sphere(6, 5, theta_star, 8);
  IclState icl = make_icl(6);
  const ModelTrajectory traj = run_learner(icl, stream);
  const ErrorMatrix em = error_matrix(traj, stream);
  for (int t = 2; t <= 5; ++t) {
    CHECK(std::abs(em(t, t)) < 1e-10);
    CHECK(forgetting(em, t) ==
          doctest::Approx(static_cast<double>(t) / (t - 1) * mse(em, t)).epsilon(1e-10));
  }
}

TEST_CASE("metric csv layout") {
  ModelTrajectory traj{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 1.0),
                       Eigen::VectorXd::Constant(1, 1.5)};
  const ErrorMatrix em = error_matrix(traj, two_task_fixture());
  const std::string path = "metrics_layout_test.csv";
  write_metrics_csv(em, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,mse,forgetting");
  std::getline(in, line);
  CHECK(line == "1,4,");  // no forgetting at t = 1
  std::getline(in, line);
  CHECK(line == "2,0.625,-3");
  in.close();
  std::remove(path.c_str());

  const std::string epath = "errors_layout_test.csv";
  write_error_matrix_csv(em, epath);
  std::ifstream ein(epath);
  std::getline(ein, line);
  CHECK(line == "i,j,eps");
  std::getline(ein, line);
  CHECK(line == "1,0,4");
  ein.close();
  std::remove(epath.c_str());
}
