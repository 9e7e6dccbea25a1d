#pragma once

#include <stdexcept>
#include <string>

namespace afcl {

/// Base class for all library-specific failures.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that must have full column rank does not; the message names the
/// offending singular value.
class rank_deficiency_error : public error {
 public:
  rank_deficiency_error(const std::string& what, double sigma)
      : error(what), sigma_(sigma) {}
  double offending_singular_value() const { return sigma_; }

 private:
  double sigma_;
};

/// A new task is linearly dependent on previously ingested tasks. Carries the
/// a-priori residual so the caller can distinguish a consistent duplicate
/// (residual ~ 0, safe to skip) from an infeasible constraint set.
class dependent_task_error : public error {
 public:
  dependent_task_error(const std::string& what, double residual)
      : error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Two tasks are colinear where a schedule or solver needs them not to be.
class degenerate_task_error : public error {
 public:
  using error::error;
};

/// A recursion denominator or weight left the representable range.
class numeric_range_error : public error {
 public:
  using error::error;
};

/// A covariance matrix fails the symmetric positive (semi-)definite contract.
class invalid_model_error : public error {
 public:
  using error::error;
};

/// Gaussian conditioning hit a numerically singular innovation covariance.
class conditioning_error : public error {
 public:
  using error::error;
};

/// Backward smoothing needs an invertible predicted covariance and none was
/// available (and the caller did not opt into flooring).
class smoothing_error : public error {
 public:
  using error::error;
};

/// An experiment configuration failed validation; the message names the key.
class config_error : public error {
 public:
  using error::error;
};

}  // namespace afcl
