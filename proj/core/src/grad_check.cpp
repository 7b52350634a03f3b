#include "provp/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "provp/error.hpp"

namespace provp {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  Graph g(/*grad_enabled=*/false);
  Var out = f(g, g.constant_ref(x));
  if (out.value().size() != 1) {
    throw DimensionError("finite_difference_check: function must return one element, got " +
                         to_string(out.shape()));
  }
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw EvaluationError("finite_difference_check: non-finite f(x)");
  return v;
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarFunction& f, const Tensor& x,
                                        const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("finite_difference_check: step must be positive");

  GradCheckReport report;
  {
    Graph g;
    Var input = g.variable(Tensor(x.shape(), std::vector<double>(x.values().begin(), x.values().end())));
    Var out = f(g, input);
    if (out.value().size() != 1) {
      throw DimensionError("finite_difference_check: function must return one element, got " +
                           to_string(out.shape()));
    }
    if (!std::isfinite(out.value()[0])) {
      throw EvaluationError("finite_difference_check: non-finite f(x)");
    }
    g.backward(out);
    report.autodiff = g.grad(input);
  }

  report.numeric = Tensor(x.shape());
  Tensor probe(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + options.step;
    const double up = evaluate(f, probe);
    probe[i] = saved - options.step;
    const double down = evaluate(f, probe);
    probe[i] = saved;
    report.numeric[i] = (up - down) / (2.0 * options.step);
  }

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = report.autodiff[i];
    const double n = report.numeric[i];
    const double abs_err = std::abs(a - n);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), options.floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace provp
