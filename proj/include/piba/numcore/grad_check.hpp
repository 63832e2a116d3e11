#pragma once

#include <functional>

#include "piba/numcore/tape.hpp"

namespace piba {

// Builds a scalar on the tape of its argument.
using ScalarFn = std::function<Var(Var)>;

struct GradCheckResult {
  double max_error = 0.0;  // max |analytic - numeric| / max(1, |analytic|)
  bool passed = false;     // max_error < tol
};

// Compares the tape gradient of f at x with central differences of step h.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h, double tol);

}  // namespace piba
