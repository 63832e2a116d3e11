#include "piba/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "piba/error.hpp"

namespace piba {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  const double v = f(tape.constant(x)).value().item();
  if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "grad_check: non-finite evaluation");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h, double tol) {
  if (!(h > 0.0)) throw Error(ErrorKind::invalid_argument, "grad_check: step must be positive");
  Tape tape;
  Var xv = tape.parameter(x);
  Var y = f(xv);
  const Tensor analytic = tape.backward(y)[xv];

  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = evaluate(f, probe);
    probe[i] = x[i] - h;
    const double down = evaluate(f, probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    result.max_error = std::max(result.max_error, err);
  }
  result.passed = result.max_error < tol;
  return result;
}

}  // namespace piba
