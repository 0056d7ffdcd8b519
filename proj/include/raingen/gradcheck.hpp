#pragma once

#include <functional>
#include <vector>

#include "raingen/graph.hpp"

namespace raingen::ad {

// Builds a scalar output from the given leaf vars.
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Central-difference check of autodiff gradients, elementwise over every
// input. Relative error uses denominator max(|a|, |b|, 1e-8); returns the
// worst element. `f` must be deterministic.
double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                         double step);

// Variant with distinct functions for the autodiff side and the value side.
// With f_autodiff == f_value this is the same check; test fixtures use
// mismatched pairs to prove that broken gradients are detected.
double finite_diff_check(const ScalarFn& f_autodiff, const ScalarFn& f_value,
                         const std::vector<Tensor>& inputs, double step);

}  // namespace raingen::ad
