#include "iadc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "iadc/ops.hpp"

namespace iadc {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void note(GradCheckResult& r, std::size_t index, double analytic, double numeric) {
  const double err = relative_error(analytic, numeric);
  if (r.checked == 0 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = index;
    r.analytic_at_worst = analytic;
    r.numeric_at_worst = numeric;
  }
  ++r.checked;
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor<double>& x, double step) {
  Tensor<double> probe = x.clone();
  probe.set_requires_grad(true);
  {
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f(probe);
    tape.backward(loss);
  }
  std::vector<double> analytic(probe.size(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  NoGradScope<double> no_grad;
  GradCheckResult result;
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = f(probe).item();
    values[i] = orig - step;
    const double down = f(probe).item();
    values[i] = orig;
    note(result, i, analytic[i], (up - down) / (2.0 * step));
  }
  return result;
}

GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                        std::vector<Tensor<double>> params,
                                        const std::vector<ParamCoordinate>& coords, double step) {
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  {
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<double> analytic;
  analytic.reserve(coords.size());
  for (const auto& c : coords) {
    const auto& p = params.at(c.tensor);
    analytic.push_back(p.has_grad() ? p.grad()[c.index] : 0.0);
  }

  NoGradScope<double> no_grad;
  GradCheckResult result;
  for (std::size_t n = 0; n < coords.size(); ++n) {
    auto values = params[coords[n].tensor].mutable_data();
    const std::size_t i = coords[n].index;
    const double orig = values[i];
    values[i] = orig + step;
    const double up = loss_fn().item();
    values[i] = orig - step;
    const double down = loss_fn().item();
    values[i] = orig;
    note(result, n, analytic[n], (up - down) / (2.0 * step));
  }
  return result;
}

}  // namespace iadc
