#include "raingen/gradsuite.hpp"

#include <algorithm>
#include <cmath>

#include "raingen/losses.hpp"

namespace raingen::harness {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kKinkMargin = 1e-3;

Tensor rand_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                   double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values) v = dist(rng);
  return t;
}

Tensor rand_off_kink(const Shape& shape, std::mt19937_64& rng) {
  Tensor t = rand_tensor(shape, rng);
  for (double& v : t.values)
    if (std::abs(v) < kKinkMargin) v = v < 0.0 ? v - kKinkMargin : v + kKinkMargin;
  return t;
}

auto plain(std::vector<Shape> shapes, double lo = -1.0, double hi = 1.0) {
  return [shapes, lo, hi](std::mt19937_64& rng) {
    std::vector<Tensor> in;
    for (const Shape& s : shapes) in.push_back(rand_tensor(s, rng, lo, hi));
    return in;
  };
}

// dx, dy separated elementwise; dz placed strictly below, inside, or above
// the interval so no abs/relu/max kink sits within the FD step.
std::vector<Tensor> tps_triple(std::mt19937_64& rng) {
  const Shape shape{4, 4};
  Tensor dx = rand_tensor(shape, rng, 0.1, 0.9);
  Tensor dy = rand_tensor(shape, rng, 0.1, 0.9);
  Tensor dz = Tensor::zeros(shape);
  std::uniform_real_distribution<double> t_inside(0.25, 0.75);
  std::uniform_real_distribution<double> bump(5.0 * kKinkMargin, 0.2);
  std::uniform_int_distribution<int> mode(0, 2);
  for (size_t i = 0; i < dx.values.size(); ++i) {
    if (std::abs(dx.values[i] - dy.values[i]) < 8.0 * kKinkMargin)
      dy.values[i] += 10.0 * kKinkMargin;
    const double lo = std::min(dx.values[i], dy.values[i]);
    const double hi = std::max(dx.values[i], dy.values[i]);
    switch (mode(rng)) {
      case 0: dz.values[i] = lo - bump(rng); break;
      case 1: dz.values[i] = lo + t_inside(rng) * (hi - lo); break;
      default: dz.values[i] = hi + bump(rng); break;
    }
  }
  return {dx, dy, dz};
}

losses::PatchSet normalized_patch_set(Graph& g, const std::vector<Var>& in) {
  return {g.l2_normalize(in[0], 1), g.l2_normalize(in[1], 1)};
}

}  // namespace

GradCaseResult run_grad_case(const GradCase& c, int seeds) {
  GradCaseResult r;
  r.name = c.name;
  r.tolerance = c.tolerance;
  for (int seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const double err =
        ad::finite_diff_check(c.autodiff_fn, c.value_fn, c.make_inputs(rng), 1e-5);
    r.max_rel_err = std::max(r.max_rel_err, err);
  }
  r.pass = r.max_rel_err <= c.tolerance;
  return r;
}

std::vector<GradCase> substrate_grad_cases() {
  auto separated_pair = [](Shape shape) {
    return [shape](std::mt19937_64& rng) {
      Tensor a = rand_tensor(shape, rng);
      Tensor b = rand_tensor(shape, rng);
      for (size_t i = 0; i < a.values.size(); ++i)
        if (std::abs(a.values[i] - b.values[i]) < kKinkMargin)
          b.values[i] += 2.0 * kKinkMargin;
      return std::vector<Tensor>{a, b};
    };
  };
  auto off_kink = [](std::vector<Shape> shapes) {
    return [shapes](std::mt19937_64& rng) {
      std::vector<Tensor> in;
      for (const Shape& s : shapes) in.push_back(rand_off_kink(s, rng));
      return in;
    };
  };

  std::vector<GradCase> cases;
  auto add = [&](std::string name, ad::ScalarFn fn,
                 std::function<std::vector<Tensor>(std::mt19937_64&)> inputs) {
    cases.push_back({std::move(name), fn, fn, std::move(inputs), 1e-4});
  };

  add("add", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.add(in[0], in[1])); }, plain({{2, 3}, {2, 3}}));
  add("sub", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.sub(in[0], in[1])); }, plain({{2, 3}, {2, 3}}));
  add("mul", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(in[0], in[1])); }, plain({{2, 3}, {2, 3}}));
  add("div", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.div(in[0], in[1])); }, plain({{2, 3}, {2, 3}}, 0.5, 1.5));
  add("add_rowvec", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(g.add(in[0], in[1]), g.add(in[0], in[1]))); }, plain({{3, 4}, {4}}));
  add("mul_scalar", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(in[0], in[1])); }, plain({{1}, {2, 3}}));
  add("neg", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.neg(in[0])); }, plain({{5}}));
  add("abs", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.abs(in[0])); }, off_kink({{5}}));
  add("exp", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.exp(in[0])); }, plain({{5}}));
  add("log", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.log(in[0])); }, plain({{5}}, 0.5, 1.5));
  add("pow", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.pow(in[0], 1.7)); }, plain({{5}}, 0.5, 1.5));
  add("relu", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.relu(in[0])); }, off_kink({{6}}));
  add("leaky_relu", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.leaky_relu(in[0], 0.2)); }, off_kink({{6}}));
  add("tanh", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.tanh(in[0])); }, plain({{5}}));
  add("sigmoid", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.sigmoid(in[0])); }, plain({{5}}));
  add("maximum", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.maximum(in[0], in[1])); }, separated_pair({6}));
  add("minimum", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.minimum(in[0], in[1])); }, separated_pair({6}));
  add("matmul", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.matmul(in[0], in[1])); }, plain({{2, 3}, {3, 4}}));
  add("matmul_bt", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.matmul_bt(in[0], in[1])); }, plain({{2, 3}, {4, 3}}));
  add("softmax", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(in[1], g.softmax(in[0], 1))); }, plain({{2, 4}, {2, 4}}));
  add("sum", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(g.sum(in[0], 0), g.sum(in[1], 1))); }, plain({{3, 3}, {3, 3}}));
  add("mean", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(g.mean(in[0], 1), g.mean(in[1], 0))); }, plain({{3, 3}, {3, 3}}));
  add("l2_normalize", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(in[1], g.l2_normalize(in[0], 1))); }, plain({{2, 4}, {2, 4}}));
  add("instance_norm", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(in[1], g.instance_norm(in[0]))); }, plain({{1, 2, 3, 3}, {1, 2, 3, 3}}));
  add("reshape", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(g.reshape(in[0], {6}), in[1])); }, plain({{2, 3}, {6}}));
  add("gather", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.gather(in[0], {5, 0, 3, 3, 1})); }, plain({{2, 3}}));
  add("concat", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.mul(g.concat({in[0], in[1]}, 1), g.concat({in[1], in[0]}, 1))); }, plain({{2, 3}, {2, 3}}));
  add("clamp",
      [](Graph& g, const std::vector<Var>& in) { return g.mean(g.clamp(in[0], -0.5, 0.5)); },
      [](std::mt19937_64& rng) {
        Tensor t = rand_tensor({6}, rng);
        for (double& v : t.values)
          if (std::abs(std::abs(v) - 0.5) < kKinkMargin) v += 3.0 * kKinkMargin;
        return std::vector<Tensor>{t};
      });
  add("conv2d", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.conv2d(in[0], in[1], in[2], 1, 1)); }, plain({{1, 2, 4, 4}, {2, 2, 3, 3}, {2}}));
  add("conv2d_stride2", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.conv2d(in[0], in[1], std::nullopt, 2, 1)); }, plain({{1, 1, 6, 6}, {2, 1, 4, 4}}));
  add("conv2d_transpose", [](Graph& g, const std::vector<Var>& in) { return g.mean(g.conv2d_transpose(in[0], in[1], in[2], 2, 1)); }, plain({{1, 2, 3, 3}, {2, 2, 4, 4}, {2}}));
  return cases;
}

std::vector<GradCase> loss_grad_cases() {
  std::vector<GradCase> cases;
  auto add = [&](std::string name, ad::ScalarFn fn,
                 std::function<std::vector<Tensor>(std::mt19937_64&)> inputs) {
    cases.push_back({std::move(name), fn, fn, std::move(inputs), 1e-4});
  };

  add("tps_loss",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::tps_loss(in[0], in[1], in[2]);
      },
      tps_triple);
  add("ptl_loss",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::ptl_loss(in[0], in[1], in[2]);
      },
      plain({{2, 3}, {2, 3}, {2, 3}}, 0.1, 0.9));
  add("gan_loss_d",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::gan_losses(in[0], in[1]).d_loss;
      },
      plain({{3, 3}, {3, 3}}, 0.05, 0.95));
  add("gan_loss_g",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::gan_losses(in[0], in[1]).g_loss;
      },
      plain({{3, 3}, {3, 3}}, 0.05, 0.95));
  add("patch_nce",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::patch_nce(normalized_patch_set(g, in), 0.2);
      },
      plain({{4, 6}, {4, 6}}));
  add("monce_hard",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::monce_loss(normalized_patch_set(g, in), 0.2, 1.0, 1.0, true);
      },
      plain({{4, 6}, {4, 6}}));
  add("monce_easy",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::monce_loss(normalized_patch_set(g, in), 0.2, 1.0, 1.0, false);
      },
      plain({{4, 6}, {4, 6}}));
  add("sence_loss",
      [](Graph& g, const std::vector<Var>& in) {
        return losses::sence_loss(normalized_patch_set(g, in), 0.37, 0.2, 1.0, 1.0);
      },
      plain({{4, 6}, {4, 6}}));
  add("composite_objective",
      [](Graph& g, const std::vector<Var>& in) {
        losses::LossConfig cfg;
        cfg.nce_variant = losses::NceVariant::kSenceMpa;
        cfg.geom_variant = losses::GeomVariant::kTps;
        Var dx = g.sigmoid(in[2]), dy = g.sigmoid(in[3]), dz = g.sigmoid(in[4]);
        losses::ObjectiveParts parts;
        parts.gan = losses::gan_losses(dy, dz).g_loss;
        parts.nce = losses::sence_loss(normalized_patch_set(g, in), 0.62, 0.2, 1.0, 1.0);
        parts.geom = losses::tps_loss(dx, dy, dz);
        return losses::composite_objective(g, parts, cfg);
      },
      [](std::mt19937_64& rng) {
        // Maps enter through sigmoid, which is monotone, so separating the
        // logits keeps dz clear of the tps kinks at the interval endpoints.
        std::vector<Tensor> in;
        in.push_back(rand_tensor({4, 6}, rng));
        in.push_back(rand_tensor({4, 6}, rng));
        const Shape map_shape{3, 3};
        Tensor lx = rand_tensor(map_shape, rng, -2.0, 2.0);
        Tensor ly = rand_tensor(map_shape, rng, -2.0, 2.0);
        Tensor lz = Tensor::zeros(map_shape);
        std::uniform_real_distribution<double> t_inside(0.3, 0.7);
        std::uniform_real_distribution<double> bump(0.1, 0.5);
        std::uniform_int_distribution<int> mode(0, 2);
        for (size_t i = 0; i < lx.values.size(); ++i) {
          if (std::abs(lx.values[i] - ly.values[i]) < 0.3) ly.values[i] += 0.4;
          const double lo = std::min(lx.values[i], ly.values[i]);
          const double hi = std::max(lx.values[i], ly.values[i]);
          switch (mode(rng)) {
            case 0: lz.values[i] = lo - bump(rng); break;
            case 1: lz.values[i] = lo + t_inside(rng) * (hi - lo); break;
            default: lz.values[i] = hi + bump(rng); break;
          }
        }
        in.push_back(std::move(lx));
        in.push_back(std::move(ly));
        in.push_back(std::move(lz));
        return in;
      });
  return cases;
}

GradSuiteReport run_gradient_suite(int seeds) {
  GradSuiteReport report;
  for (const GradCase& c : substrate_grad_cases())
    report.cases.push_back(run_grad_case(c, seeds));
  for (const GradCase& c : loss_grad_cases())
    report.cases.push_back(run_grad_case(c, seeds));
  return report;
}

}  // namespace harness
