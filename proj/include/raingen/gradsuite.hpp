#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "raingen/gradcheck.hpp"

namespace raingen::harness {

struct GradCase {
  std::string name;
  ad::ScalarFn autodiff_fn;
  ad::ScalarFn value_fn;  // finite differences run on this side
  std::function<std::vector<ad::Tensor>(std::mt19937_64&)> make_inputs;
  double tolerance = 1e-4;
};

struct GradCaseResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradSuiteReport {
  std::vector<GradCaseResult> cases;
  bool all_pass() const {
    for (const auto& c : cases)
      if (!c.pass) return false;
    return true;
  }
};

GradCaseResult run_grad_case(const GradCase& c, int seeds);

// Finite-difference cases for every differentiable primitive.
std::vector<GradCase> substrate_grad_cases();
// Finite-difference cases for every loss (tps, ptl, gan, patch_nce, monce,
// sence), drawn away from the kink points of abs/relu/max.
std::vector<GradCase> loss_grad_cases();

GradSuiteReport run_gradient_suite(int seeds);

}  // namespace raingen::harness
