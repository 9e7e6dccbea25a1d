#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

namespace afcl {

/// Deterministic random source. All distributions are implemented explicitly
/// on top of mt19937_64 so that a fixed seed reproduces the same byte stream
/// on any platform, which the stream replay contract requires
/// (std::normal_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate of each pair is
  /// cached so consecutive calls consume the generator identically everywhere.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd gaussian(int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = normal();
    return v;
  }

  /// Uniform on the unit sphere: a normalized standard Gaussian vector.
  Eigen::VectorXd unit_sphere(int d) {
    Eigen::VectorXd v = gaussian(d);
    double n = v.norm();
    while (n == 0.0) {  // astronomically unlikely; retry keeps the contract
      v = gaussian(d);
      n = v.norm();
    }
    return v / n;
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo bias is negligible for the desk-scale ranges here,
    // but rejection keeps replays stable against future range changes.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives a stream of independent trial seeds from a base seed. Trial i gets
/// seed base + i, matching the per-trial seeding contract of the experiment
/// harness.
inline std::uint64_t trial_seed(std::uint64_t base, std::uint64_t trial) {
  return base + trial;
}

}  // namespace afcl
