#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "afcl/mlp.hpp"
#include "afcl/rng.hpp"

using namespace afcl;

TEST_CASE("forward pass applies the activation at every layer") {
  Mlp net = make_mlp({2, 2, 1}, Activation::tanh_fn);
  net.layers[0] << 1.0, 0.0, 0.0, 0.5;
  net.layers[1] << 2.0, -1.0;
  const Eigen::Vector2d x(0.3, -0.8);
  const auto feats = forward_features(net, x);
  REQUIRE(feats.size() == 3);
  CHECK((feats[0] - x).norm() == 0.0);
  const double h0 = std::tanh(0.3);
  const double h1 = std::tanh(-0.4);
  CHECK(feats[1][0] == doctest::Approx(h0));
  CHECK(feats[1][1] == doctest::Approx(h1));
  // the output layer is activated too
  CHECK(feats[2][0] == doctest::Approx(std::tanh(2.0 * h0 - 1.0 * h1)));
}

TEST_CASE("backprop gradients match finite differences") {
  Rng rng(61);
  for (Activation act : {Activation::identity, Activation::tanh_fn, Activation::relu}) {
    CAPTURE(to_string(act));
    Mlp net = make_mlp_random({3, 5, 4, 2}, act, rng);
    const Eigen::VectorXd x = rng.gaussian(3);
    const Eigen::VectorXd y = rng.gaussian(2);
    const auto grads = backprop_gradients(net, x, y);
    REQUIRE(grads.size() == net.layers.size());
    double max_rel = 0.0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      REQUIRE(grads[l].rows() == net.layers[l].rows());
      REQUIRE(grads[l].cols() == net.layers[l].cols());
      for (Eigen::Index r = 0; r < grads[l].rows(); ++r)
        for (Eigen::Index c = 0; c < grads[l].cols(); ++c) {
          Mlp plus = net, minus = net;
          const double h = 1e-6 * (1.0 + std::abs(net.layers[l](r, c)));
          plus.layers[l](r, c) += h;
          minus.layers[l](r, c) -= h;
          const double fd = (mlp_loss(plus, x, y) - mlp_loss(minus, x, y)) / (2 * h);
          const double scale = std::max(1.0, std::abs(fd));
          max_rel = std::max(max_rel, std::abs(grads[l](r, c) - fd) / scale);
        }
    }
    CHECK(max_rel < 1e-6);
  }
}

TEST_CASE("relu kink at exactly zero pre-activation stays finite") {
  Mlp net = make_mlp({1, 1, 1}, Activation::relu);
  net.layers[0] << 0.0;  // pre-activation is exactly 0 for any input
  net.layers[1] << 1.0;
  const auto grads =
      backprop_gradients(net, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0));
  for (const auto& g : grads) CHECK(g.allFinite());
  // derivative at the kink is taken as 0, so the first layer sees no signal
  CHECK(grads[0].norm() == 0.0);
}

TEST_CASE("gradient projection freezes old task features at every layer") {
  Rng rng(62);
  Mlp net = make_mlp_random({4, 6, 6, 2}, Activation::tanh_fn, rng);
  FeatureProjectors fp = make_feature_projectors(net);
  std::vector<Eigen::VectorXd> xs;
  std::vector<std::vector<Eigen::VectorXd>> stored_feats;
  for (int t = 0; t < 3; ++t) {
    const Eigen::VectorXd x = rng.gaussian(4);
    const Eigen::VectorXd y = rng.gaussian(2);
    const Mlp before = net;
    const GpStepResult res = gp_step(net, fp, x, y, 0.1);
    CHECK(res.loss_before == doctest::Approx(mlp_loss(before, x, y)));
    CHECK(res.loss_after == doctest::Approx(mlp_loss(net, x, y)));
    xs.push_back(x);
    stored_feats.push_back(forward_features(net, x));
    // every earlier task's features are still what they were when anchored
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      const auto now = forward_features(net, xs[i]);
      for (std::size_t l = 0; l < now.size(); ++l)
        CHECK((now[l] - stored_feats[i][l]).norm() < 1e-10);
    }
  }
}

TEST_CASE("a tiny net saturates once its feature spans fill up") {
  Rng rng(63);
  Mlp net = make_mlp_random({2, 2, 1}, Activation::tanh_fn, rng);
  FeatureProjectors fp = make_feature_projectors(net);
  bool saturated = false;
  Mlp frozen = net;
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd x = rng.gaussian(2);
    const Eigen::VectorXd y = rng.gaussian(1);
    const GpStepResult res = gp_step(net, fp, x, y, 0.05);
    if (saturated) {
      // once saturated, parameters effectively stop moving (the residual
      // projected direction is below the saturation threshold)
      for (std::size_t l = 0; l < net.layers.size(); ++l)
        CHECK((net.layers[l] - frozen.layers[l]).norm() < 1e-10);
      CHECK(res.saturated);
    }
    if (res.saturated && !saturated) {
      saturated = true;
      frozen = net;
    }
  }
  CHECK(saturated);  // 2-d inputs: two tasks exhaust the input span
}

TEST_CASE("full-energy low-rank projection is plain gradient projection") {
  Rng rng(64);
  Mlp a = make_mlp_random({3, 5, 2}, Activation::tanh_fn, rng);
  Mlp b = a;
  FeatureProjectors fa = make_feature_projectors(a);
  FeatureProjectors fb = make_feature_projectors(b);
  Rng data(65);
  for (int t = 0; t < 4; ++t) {
    const Eigen::VectorXd x = data.gaussian(3);
    const Eigen::VectorXd y = data.gaussian(2);
    gp_step(a, fa, x, y, 0.1);
    gp_lowrank_step(b, fb, x, y, 0.1, 1.0);
    for (std::size_t l = 0; l < a.layers.size(); ++l)
      CHECK((a.layers[l] - b.layers[l]).norm() < 1e-10);
  }
}

TEST_CASE("truncated low-rank projection keeps learning where full rank stalls") {
  Rng rng(66);
  Mlp net = make_mlp_random({2, 2, 1}, Activation::tanh_fn, rng);
  FeatureProjectors fp = make_feature_projectors(net);
  Rng data(67);
  bool moved_after_saturation = false;
  bool full_would_be_saturated = false;
  for (int t = 0; t < 6; ++t) {
    const Eigen::VectorXd x = data.gaussian(2);
    const Eigen::VectorXd y = data.gaussian(1);
    const Mlp before = net;
    const GpStepResult res = gp_lowrank_step(net, fp, x, y, 0.05, 0.5);
    if (full_would_be_saturated && !res.saturated) {
      for (std::size_t l = 0; l < net.layers.size(); ++l)
        if ((net.layers[l] - before.layers[l]).norm() > 0) moved_after_saturation = true;
    }
    if (t >= 2) full_would_be_saturated = true;  // input span is full by then
  }
  CHECK(moved_after_saturation);
}

TEST_CASE("json checkpoint round trip is exact") {
  Rng rng(68);
  const Mlp net = make_mlp_random({3, 4, 2}, Activation::relu, rng);
  const std::string path = "mlp_roundtrip_test.json";
  save_mlp_json(net, path);
  const Mlp back = load_mlp_json(path);
  REQUIRE(back.layers.size() == net.layers.size());
  CHECK(back.act == net.act);
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    CHECK((back.layers[l] - net.layers[l]).norm() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = "mlp_corrupt_test.json";
  {
    std::ofstream out(path);
    out << "{\"dims\": [2, 2]";  // truncated
  }
  CHECK_THROWS(load_mlp_json(path));
  std::remove(path.c_str());
  CHECK_THROWS(load_mlp_json("does_not_exist_anywhere.json"));
}

TEST_CASE("linearization is exact at the anchor and for affine maps") {
  ScalarModel f;
  f.value = [](const Eigen::VectorXd& v) { return v[0] * v[0]; };
  f.gradient = [](const Eigen::VectorXd& v) {
    return Eigen::VectorXd::Constant(1, 2.0 * v[0]);
  };
  const AffineModel aff = linearize_model(f, Eigen::VectorXd::Constant(1, 1.0));
  // f~(theta) = 1 + 2 (theta - 1)
  CHECK(aff.value(Eigen::VectorXd::Constant(1, 1.0)) == doctest::Approx(1.0));
  CHECK(aff.value(Eigen::VectorXd::Constant(1, 1.1)) == doctest::Approx(1.2));

  ScalarModel lin;
  lin.value = [](const Eigen::VectorXd& v) { return 3.0 * v[0] - 2.0 * v[1] + 0.7; };
  const AffineModel aff2 = linearize_model(lin, Eigen::Vector2d(0.4, -0.9));
  CHECK(aff2.value(Eigen::Vector2d(5.0, 2.0)) ==
        doctest::Approx(3.0 * 5.0 - 2.0 * 2.0 + 0.7).epsilon(1e-7));
}

TEST_CASE("fd_gradient approximates a smooth gradient") {
  const auto f = [](const Eigen::VectorXd& v) {
    return std::sin(v[0]) + v[1] * v[1] * 0.5;
  };
  const Eigen::VectorXd at = Eigen::Vector2d(0.3, -1.1);
  const Eigen::VectorXd g = fd_gradient(f, at);
  CHECK(g[0] == doctest::Approx(std::cos(0.3)).epsilon(1e-7));
  CHECK(g[1] == doctest::Approx(-1.1).epsilon(1e-7));
}

TEST_CASE("relinearized continual learning on a quadratic, one step by hand") {
  // f(theta) = theta^2, task y = 4, start at theta = 1: the expansion there is
  // 1 + 2(theta-1), so the linear task is (slope 2, target 4 adjusted to the
  // anchor) and the projected step lands on theta = 2.5.
  NonlinearTask task;
  task.f.value = [](const Eigen::VectorXd& v) { return v[0] * v[0]; };
  task.f.gradient = [](const Eigen::VectorXd& v) {
    return Eigen::VectorXd::Constant(1, 2.0 * v[0]);
  };
  task.y = 4.0;
  const ModelTrajectory traj =
      linearized_icl_run({task}, Eigen::VectorXd::Constant(1, 1.0));
  REQUIRE(traj.size() == 2);
  CHECK(traj[0][0] == doctest::Approx(1.0));
  CHECK(traj[1][0] == doctest::Approx(2.5));
}

TEST_CASE("layerwise rls at beta=0 walks the gradient-projection trajectory") {
  Rng rng(69);
  Mlp a = make_mlp_random({3, 4, 4, 2}, Activation::tanh_fn, rng);
  Mlp b = a;
  FeatureProjectors fp = make_feature_projectors(a);
  LayerwiseRls rls(b, 0.0, 1.0);
  Rng data(70);
  for (int t = 0; t < 3; ++t) {
    const Eigen::VectorXd x = data.gaussian(3);
    const Eigen::VectorXd y = data.gaussian(2);
    gp_step(a, fp, x, y, 0.05);
    rls.step(b, x, y, 0.05);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      CAPTURE(t);
      CAPTURE(l);
      CHECK((a.layers[l] - b.layers[l]).norm() < 1e-8);
    }
  }
}

TEST_CASE("the first layerwise rls step is an unprojected gradient step") {
  Rng rng(71);
  Mlp net = make_mlp_random({2, 3, 1}, Activation::tanh_fn, rng);
  Mlp plain = net;
  LayerwiseRls rls(net, 0.0, 2.5);  // lambda cancels: lambda * Phi_0 = I
  const Eigen::VectorXd x = Eigen::Vector2d(0.4, -0.2);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 0.3);
  const auto grads = backprop_gradients(plain, x, y);
  rls.step(net, x, y, 0.1);
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    CHECK((net.layers[l] - (plain.layers[l] - 0.1 * grads[l])).norm() < 1e-12);
}
