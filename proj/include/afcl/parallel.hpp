#pragma once

#include <exception>

namespace afcl {

/// Runs fn(i) for i = 0..n-1 across OpenMP threads when available. Trials
/// must be independent and write only to their own output slots; with
/// per-trial seeds and ordered aggregation afterwards, results do not depend
/// on the thread count. The first exception thrown by any trial is rethrown
/// after the loop drains (exceptions must not cross an OpenMP region).
template <class Fn>
void for_each_trial(int n, Fn&& fn) {
  std::exception_ptr first_error = nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical(afcl_for_each_trial)
#endif
      {
        if (!first_error) first_error = std::current_exception();
      }
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

/// Single-threaded reference with identical semantics, kept so tests and
/// benchmarks can pin down any divergence introduced by the parallel path.
template <class Fn>
void for_each_trial_serial(int n, Fn&& fn) {
  std::exception_ptr first_error = nullptr;
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace afcl
