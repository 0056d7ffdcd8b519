#include "raingen/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace raingen::ad {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    Tensor copy = t;
    copy.requires_grad = false;
    leaves.push_back(g.leaf(std::move(copy)));
  }
  return f(g, leaves).scalar();
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                         double step) {
  return finite_diff_check(f, f, inputs, step);
}

double finite_diff_check(const ScalarFn& f_autodiff, const ScalarFn& f_value,
                         const std::vector<Tensor>& inputs, double step) {
  RG_CHECK(step > 0.0, "finite_diff_check: step must be positive, got ", step);

  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    Tensor copy = t;
    copy.requires_grad = true;
    leaves.push_back(g.leaf(std::move(copy)));
  }
  Var out = f_autodiff(g, leaves);
  std::vector<std::vector<double>> grads = g.gradients(out, leaves);

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (size_t i = 0; i < inputs[t].values.size(); ++i) {
      const double orig = probe[t].values[i];
      probe[t].values[i] = orig + step;
      const double fp = evaluate(f_value, probe);
      probe[t].values[i] = orig - step;
      const double fm = evaluate(f_value, probe);
      probe[t].values[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double ad = grads[t][i];
      const double denom = std::max({std::abs(ad), std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(ad - fd) / denom);
    }
  }
  return worst;
}

}  // namespace raingen::ad
