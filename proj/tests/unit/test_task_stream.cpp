#include <doctest.h>

#include <cmath>
#include <sstream>

#include "afcl/errors.hpp"
#include "afcl/rng.hpp"
#include "afcl/task_stream.hpp"

using namespace afcl;

TEST_CASE("iid sphere streams have unit inputs and consistent targets") {
  Rng rng(99);
  const Eigen::VectorXd theta_star = rng.gaussian(5);
  const TaskStream stream = generate_iid_sphere(5, 20, theta_star, 1234);
  REQUIRE(stream.size() == 20);
  CHECK(stream.mode == StreamMode::iid_sphere);
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const ScalarTask& task = stream.scalar(t);
    CHECK(std::abs(task.x.norm() - 1.0) < 1e-12);
    CHECK(task.y == doctest::Approx(task.x.dot(theta_star)).epsilon(1e-14));
  }
  // same seed, same stream; different seed, different draws
  const TaskStream again = generate_iid_sphere(5, 20, theta_star, 1234);
  CHECK((again.scalar(7).x - stream.scalar(7).x).norm() == 0.0);
  const TaskStream other = generate_iid_sphere(5, 20, theta_star, 1235);
  CHECK((other.scalar(0).x - stream.scalar(0).x).norm() > 1e-6);
}

TEST_CASE("recurring streams cycle their base tasks") {
  Rng rng(5);
  std::vector<ScalarTask> base(2);
  base[0].x = rng.unit_sphere(4);
  base[0].y = 1.5;
  base[1].x = rng.unit_sphere(4);
  base[1].y = -0.25;
  const TaskStream stream = generate_recurring(base, 7);
  REQUIRE(stream.size() == 7);
  for (std::size_t t = 0; t < 7; ++t) {
    CHECK((stream.scalar(t).x - base[t % 2].x).norm() == 0.0);
    CHECK(stream.scalar(t).y == base[t % 2].y);
  }
  CHECK_THROWS_AS(generate_recurring({}, 3), std::invalid_argument);
}

TEST_CASE("min_norm_solution oracles") {
  SUBCASE("single axis constraint") {
    Eigen::MatrixXd X(3, 1);
    X << 1, 0, 0;
    Eigen::VectorXd y(1);
    y << 2;
    const Eigen::VectorXd theta = min_norm_solution(X, y);
    CHECK((theta - Eigen::Vector3d(2, 0, 0)).norm() < 1e-14);
  }
  SUBCASE("two constraints, hand-solved") {
    // theta = (1,1,0) satisfies both and lies in span{x1,x2}.
    Eigen::MatrixXd X(3, 2);
    X << 1, 1 / std::sqrt(2.0), 0, 1 / std::sqrt(2.0), 0, 0;
    Eigen::VectorXd y(2);
    y << 1, std::sqrt(2.0);
    const Eigen::VectorXd theta = min_norm_solution(X, y);
    CHECK((theta - Eigen::Vector3d(1, 1, 0)).norm() < 1e-12);
  }
  SUBCASE("repeated input is rank deficient") {
    Eigen::MatrixXd X(3, 2);
    X << 1, 1, 0, 0, 0, 0;
    Eigen::VectorXd y(2);
    y << 1, 1;
    CHECK_THROWS_AS(min_norm_solution(X, y), rank_deficiency_error);
    try {
      min_norm_solution(X, y);
    } catch (const rank_deficiency_error& e) {
      CHECK(e.offending_singular_value() < 1e-12);
    }
  }
  SUBCASE("empty prefix gives the zero model") {
    const Eigen::VectorXd theta = min_norm_solution(Eigen::MatrixXd(4, 0), Eigen::VectorXd(0));
    CHECK(theta.norm() == 0.0);
  }
  SUBCASE("more tasks than dimensions is refused") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(2, 3);
    CHECK_THROWS_AS(min_norm_solution(X, Eigen::Vector3d(1, 2, 3)), std::invalid_argument);
  }
}

TEST_CASE("solution recovery: min-norm of a full prefix equals the generator") {
  // theta_star is reachable only if it lies in the span of the inputs, so use
  // T = d where the sphere draws span everything almost surely.
  Rng rng(31);
  const Eigen::VectorXd theta_star = rng.gaussian(6);
  const TaskStream stream = generate_iid_sphere(6, 6, theta_star, 77);
  const Eigen::VectorXd fit = min_norm_solution(stream.input_prefix(6), stream.target_prefix(6));
  CHECK((fit - theta_star).norm() < 1e-8);
}

TEST_CASE("jsonl round trip preserves scalar streams byte for byte") {
  Rng rng(11);
  const Eigen::VectorXd theta_star = rng.gaussian(3);
  const TaskStream stream = generate_iid_sphere(3, 5, theta_star, 42);
  const std::string text = to_jsonl(stream);
  std::istringstream in(text);
  const TaskStream back = read_jsonl(in);
  REQUIRE(back.size() == stream.size());
  CHECK(back.mode == stream.mode);
  CHECK(back.dim == stream.dim);
  REQUIRE(back.theta_star.has_value());
  CHECK((*back.theta_star - theta_star).norm() == 0.0);
  for (std::size_t t = 0; t < stream.size(); ++t) {
    CHECK((back.scalar(t).x - stream.scalar(t).x).norm() == 0.0);
    CHECK(back.scalar(t).y == stream.scalar(t).y);
  }
  CHECK(to_jsonl(back) == text);  // replay is byte-identical
}

TEST_CASE("jsonl rejects malformed input with the offending line") {
  const auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_jsonl(in);
  };
  CHECK_THROWS_AS(parse(""), error);
  CHECK_THROWS_AS(parse("{\"mode\":\"iid-sphere\",\"seed\":1}\n"), error);  // missing d
  // task numbering must be 1-based and contiguous
  const std::string hdr = "{\"d\":2,\"mode\":\"explicit\",\"seed\":0}\n";
  CHECK_THROWS_WITH_AS(parse(hdr + "{\"t\":2,\"x\":[1,0],\"y\":1}\n"),
                       doctest::Contains("line 2"), error);
  CHECK_THROWS_AS(parse(hdr + "{\"t\":1,\"x\":[1,0,0],\"y\":1}\n"), error);  // wrong width
  CHECK_THROWS_AS(parse("{\"d\":0,\"mode\":\"explicit\",\"seed\":0}\n"), error);
}

TEST_CASE("lgm sampling is deterministic and shape-checked") {
  LgmModel model;
  model.mu1 = Eigen::Vector2d(1.0, -1.0);
  model.Sigma1 = Eigen::Matrix2d::Identity();
  model.A = {0.5 * Eigen::Matrix2d::Identity()};
  model.Q = {0.1 * Eigen::Matrix2d::Identity()};
  model.X = {Eigen::MatrixXd::Identity(2, 1)};
  model.R = {Eigen::MatrixXd::Constant(1, 1, 0.2)};
  model.validate();
  CHECK(model.dim() == 2);
  CHECK(model.obs_dim() == 1);

  const TaskStream a = sample_lgm(model, 6, 9);
  const TaskStream b = sample_lgm(model, 6, 9);
  REQUIRE(a.size() == 6);
  REQUIRE(a.trajectory.size() == 6);
  CHECK(a.is_block());
  for (std::size_t t = 0; t < 6; ++t) {
    CHECK((a.block(t).X - model.X[0]).norm() == 0.0);
    CHECK((a.block(t).y - b.block(t).y).norm() == 0.0);
    CHECK((a.trajectory[t] - b.trajectory[t]).norm() == 0.0);
  }

  SUBCASE("per-task matrix lists must have length 1 or T") {
    LgmModel bad = model;
    bad.A = {model.A[0], model.A[0]};  // 2 entries for a 6-task stream
    CHECK_THROWS_AS(sample_lgm(bad, 6, 9), invalid_model_error);
    CHECK_NOTHROW(sample_lgm(bad, 2, 9));
  }
  SUBCASE("zero process noise is fine to sample, rejected under require_pd") {
    LgmModel degen = model;
    degen.Q = {Eigen::Matrix2d::Zero()};
    CHECK_NOTHROW(degen.validate());
    CHECK_THROWS_AS(degen.validate(true), invalid_model_error);
    const TaskStream s = sample_lgm(degen, 4, 1);
    // with Q = 0 the latent states follow the deterministic recursion exactly
    CHECK((s.trajectory[1] - model.A[0] * s.trajectory[0]).norm() < 1e-14);
  }
  SUBCASE("asymmetric covariance is rejected") {
    LgmModel bad = model;
    Eigen::Matrix2d S;
    S << 1.0, 0.3, 0.0, 1.0;
    bad.Sigma1 = S;
    CHECK_THROWS_AS(bad.validate(), invalid_model_error);
  }
}

TEST_CASE("block streams survive the jsonl round trip") {
  LgmModel model;
  model.mu1 = Eigen::Vector2d(0.0, 1.0);
  model.Sigma1 = Eigen::Matrix2d::Identity();
  model.A = {Eigen::Matrix2d::Identity()};
  model.Q = {0.5 * Eigen::Matrix2d::Identity()};
  model.X = {Eigen::MatrixXd::Random(2, 2)};
  model.R = {0.3 * Eigen::Matrix2d::Identity()};
  const TaskStream stream = sample_lgm(model, 3, 4);
  const std::string text = to_jsonl(stream);
  std::istringstream in(text);
  const TaskStream back = read_jsonl(in);
  REQUIRE(back.is_block());
  REQUIRE(back.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK((back.block(t).X - stream.block(t).X).norm() == 0.0);
    CHECK((back.block(t).y - stream.block(t).y).norm() == 0.0);
  }
  CHECK(back.trajectory.size() == stream.trajectory.size());
}

TEST_CASE("psd_sqrt squares back to the input") {
  Rng rng(3);
  Eigen::MatrixXd C(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) C(r, c) = rng.normal();
  const Eigen::MatrixXd cov = C * C.transpose();
  const Eigen::MatrixXd S = psd_sqrt(cov);
  CHECK((S * S.transpose() - cov).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(psd_sqrt(-Eigen::MatrixXd::Identity(2, 2)), invalid_model_error);
}

TEST_CASE("rng basics hold up") {
  Rng rng(1);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += rng.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
  for (int i = 0; i < 100; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(7) < 7);
  }
  CHECK(trial_seed(100, 3) == 103);
  // unit_sphere really is unit length
  CHECK(std::abs(Rng(8).unit_sphere(9).norm() - 1.0) < 1e-12);
}
