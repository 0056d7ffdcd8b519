#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "raingen/gradsuite.hpp"
#include "raingen/losses.hpp"

using raingen::Error;
using raingen::ad::Graph;
using raingen::ad::Shape;
using raingen::ad::Tensor;
using raingen::ad::Var;
namespace losses = raingen::losses;

namespace {

Var map_leaf(Graph& g, Shape shape, std::vector<double> values) {
  return g.leaf(Tensor(std::move(shape), std::move(values)));
}

// Random unit-row [n,d] embedding pair as graph leaves.
losses::PatchSet random_patch_set(Graph& g, int64_t n, int64_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor a = Tensor::zeros({n, d});
  Tensor p = Tensor::zeros({n, d});
  for (double& v : a.values) v = dist(rng);
  for (double& v : p.values) v = dist(rng);
  return {g.l2_normalize(g.leaf(a), 1), g.l2_normalize(g.leaf(p), 1)};
}

oracles::Mat to_rows(const Tensor& t) {
  oracles::Mat rows(static_cast<size_t>(t.shape[0]));
  for (int64_t i = 0; i < t.shape[0]; ++i)
    rows[static_cast<size_t>(i)] =
        std::vector<double>(t.values.begin() + i * t.shape[1],
                            t.values.begin() + (i + 1) * t.shape[1]);
  return rows;
}

oracles::Mat sims_of(const losses::PatchSet& ps) {
  return oracles::similarity(to_rows(ps.anchors.tensor()), to_rows(ps.positives.tensor()));
}

// Anchors e_i, positives renormalized alpha*e_j + gamma*1: every cross
// similarity is identical, the diagonal differs.
losses::PatchSet uniform_sim_patch_set(Graph& g, int64_t n) {
  Tensor a = Tensor::zeros({n, n});
  Tensor p = Tensor::zeros({n, n});
  const double alpha = 1.0, gamma = 0.3;
  for (int64_t i = 0; i < n; ++i) {
    a.values[static_cast<size_t>(i * n + i)] = 1.0;
    for (int64_t k = 0; k < n; ++k)
      p.values[static_cast<size_t>(i * n + k)] = gamma + (k == i ? alpha : 0.0);
  }
  return {g.leaf(a), g.l2_normalize(g.leaf(p), 1)};
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("tps scalar hand examples") {
  Graph g;
  CHECK(losses::tps_loss(map_leaf(g, {1, 1}, {0.2}), map_leaf(g, {1, 1}, {0.8}),
                         map_leaf(g, {1, 1}, {0.5}))
            .scalar() == 0.0);
  CHECK(losses::tps_loss(map_leaf(g, {1, 1}, {0.2}), map_leaf(g, {1, 1}, {0.8}),
                         map_leaf(g, {1, 1}, {0.99}))
            .scalar() == doctest::Approx(0.38).epsilon(1e-12));
}

TEST_CASE("tps is exactly zero when dz equals dx") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(0.01, 0.99);
  Graph g;
  Tensor dx = Tensor::zeros({3, 5});
  Tensor dy = Tensor::zeros({3, 5});
  for (double& v : dx.values) v = dist(rng);
  for (double& v : dy.values) v = dist(rng);
  Var vx = g.leaf(dx), vy = g.leaf(dy), vz = g.leaf(dx);
  CHECK(losses::tps_loss(vx, vy, vz).scalar() == 0.0);
}

TEST_CASE("tps zero exactly iff elementwise betweenness, and never negative") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> dist(0.01, 0.99);
  for (int trial = 0; trial < 200; ++trial) {
    Graph g;
    Tensor dx = Tensor::zeros({2, 4}), dy = Tensor::zeros({2, 4}), dz = Tensor::zeros({2, 4});
    for (double& v : dx.values) v = dist(rng);
    for (double& v : dy.values) v = dist(rng);
    // half the trials force betweenness, half draw dz freely
    const bool force_between = trial % 2 == 0;
    for (size_t i = 0; i < dz.values.size(); ++i) {
      if (force_between) {
        std::uniform_real_distribution<double> t(0.0, 1.0);
        dz.values[i] = dx.values[i] + t(rng) * (dy.values[i] - dx.values[i]);
      } else {
        dz.values[i] = dist(rng);
      }
    }
    bool between = true;
    for (size_t i = 0; i < dz.values.size(); ++i) {
      const double lo = std::min(dx.values[i], dy.values[i]);
      const double hi = std::max(dx.values[i], dy.values[i]);
      if (dz.values[i] < lo || dz.values[i] > hi) between = false;
    }
    const double loss =
        losses::tps_loss(g.leaf(dx), g.leaf(dy), g.leaf(dz)).scalar();
    CHECK(loss >= 0.0);
    CHECK((loss == 0.0) == between);
  }
}

TEST_CASE("tps agrees with the literal triangle-slack formula") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> dist(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    std::vector<double> dx(12), dy(12), dz(12);
    for (auto* v : {&dx, &dy, &dz})
      for (double& x : *v) x = dist(rng);
    const double got =
        losses::tps_loss(map_leaf(g, {3, 4}, dx), map_leaf(g, {3, 4}, dy),
                         map_leaf(g, {3, 4}, dz))
            .scalar();
    CHECK(got == doctest::Approx(oracles::tps_brute(dx, dy, dz)).epsilon(1e-12));
  }
}

TEST_CASE("tps shift invariance and positive homogeneity") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> dist(0.01, 0.99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> dx(8), dy(8), dz(8);
    for (auto* v : {&dx, &dy, &dz})
      for (double& x : *v) x = dist(rng);
    auto eval = [&](double shift, double scale) {
      Graph g;
      auto shifted = [&](std::vector<double> v) {
        for (double& x : v) x = scale * (x + shift);
        return map_leaf(g, {2, 4}, std::move(v));
      };
      return losses::tps_loss(shifted(dx), shifted(dy), shifted(dz)).scalar();
    };
    const double base = eval(0.0, 1.0);
    CHECK(eval(0.37, 1.0) == doctest::Approx(base).epsilon(1e-9));
    CHECK(eval(0.0, 2.5) == doctest::Approx(2.5 * base).epsilon(1e-9));
  }
}

TEST_CASE("ptl hand projection") {
  Graph g;
  const double got =
      losses::ptl_loss(map_leaf(g, {1, 2}, {0.0, 0.0}), map_leaf(g, {1, 2}, {1.0, 0.0}),
                       map_leaf(g, {1, 2}, {0.5, 1.0}))
          .scalar();
  CHECK(got == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("collinear extension: ptl is zero while tps is positive") {
  // Dyadic values keep the projection arithmetic exact: z = x + 2(y - x).
  Graph g;
  std::vector<double> x = {0.25, 0.5, 0.75, 0.25};
  std::vector<double> y = {0.375, 0.4375, 0.625, 0.375};
  std::vector<double> z(4);
  for (size_t i = 0; i < 4; ++i) z[i] = x[i] + 2.0 * (y[i] - x[i]);
  Var vx = map_leaf(g, {2, 2}, x), vy = map_leaf(g, {2, 2}, y), vz = map_leaf(g, {2, 2}, z);
  CHECK(losses::ptl_loss(vx, vy, vz).scalar() == 0.0);
  CHECK(losses::tps_loss(vx, vy, vz).scalar() > 0.0);
}

TEST_CASE("ptl of z == x is zero and identical maps are rejected") {
  Graph g;
  std::vector<double> x = {0.2, 0.4, 0.6, 0.8};
  std::vector<double> y = {0.3, 0.1, 0.9, 0.5};
  CHECK(losses::ptl_loss(map_leaf(g, {2, 2}, x), map_leaf(g, {2, 2}, y),
                         map_leaf(g, {2, 2}, x))
            .scalar() == 0.0);
  CHECK_THROWS_WITH_AS(losses::ptl_loss(map_leaf(g, {2, 2}, x), map_leaf(g, {2, 2}, x),
                                        map_leaf(g, {2, 2}, y)),
                       doctest::Contains("dx == dy"), Error);
}

TEST_CASE("ptl matches the brute-force projection on random triples") {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> dist(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    std::vector<double> x(6), y(6), z(6);
    for (auto* v : {&x, &y, &z})
      for (double& q : *v) q = dist(rng);
    const double got = losses::ptl_loss(map_leaf(g, {2, 3}, x), map_leaf(g, {2, 3}, y),
                                        map_leaf(g, {2, 3}, z))
                           .scalar();
    CHECK(got == doctest::Approx(oracles::ptl_brute(x, y, z)).epsilon(1e-10));
  }
}

TEST_CASE("gan loss hand values") {
  Graph g;
  Var real = map_leaf(g, {2, 2}, {0.9, 0.9, 0.9, 0.9});
  Var fake = map_leaf(g, {2, 2}, {0.1, 0.1, 0.1, 0.1});
  auto pair = losses::gan_losses(real, fake);
  CHECK(pair.d_loss.scalar() == doctest::Approx(-2.0 * std::log(0.9)).epsilon(1e-12));
  CHECK(pair.g_loss.scalar() == doctest::Approx(-std::log(0.1)).epsilon(1e-12));

  Var half = map_leaf(g, {1, 2}, {0.5, 0.5});
  auto confusion = losses::gan_losses(half, half);
  CHECK(confusion.d_loss.scalar() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("d_loss decreases when d_real increases elementwise") {
  Graph g;
  Var fake = map_leaf(g, {1, 2}, {0.3, 0.4});
  const double lo =
      losses::gan_losses(map_leaf(g, {1, 2}, {0.6, 0.7}), fake).d_loss.scalar();
  const double hi =
      losses::gan_losses(map_leaf(g, {1, 2}, {0.8, 0.9}), fake).d_loss.scalar();
  CHECK(hi < lo);
}

TEST_CASE("patch_nce closed-form: orthonormal pairs") {
  Graph g;
  Tensor eye = Tensor::zeros({2, 2});
  eye.values = {1.0, 0.0, 0.0, 1.0};
  losses::PatchSet ps{g.leaf(eye), g.leaf(eye)};
  const double expected = 2.0 * std::log(1.0 + std::exp(-1.0));
  CHECK(losses::patch_nce(ps, 1.0).scalar() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("patch_nce with all similarities equal is N log N") {
  Graph g;
  const int64_t n = 4;
  Tensor rows = Tensor::zeros({n, 3});
  for (int64_t i = 0; i < n; ++i) rows.values[static_cast<size_t>(i * 3)] = 1.0;
  losses::PatchSet ps{g.leaf(rows), g.leaf(rows)};
  CHECK(losses::patch_nce(ps, 1.0).scalar() ==
        doctest::Approx(n * std::log(static_cast<double>(n))).epsilon(1e-12));
}

TEST_CASE("patch_nce at huge temperature approaches N log N") {
  std::mt19937_64 rng(36);
  Graph g;
  losses::PatchSet ps = random_patch_set(g, 5, 8, rng);
  CHECK(losses::patch_nce(ps, 1e9).scalar() ==
        doctest::Approx(5.0 * std::log(5.0)).epsilon(1e-6));
}

TEST_CASE("patch_nce matches the brute-force evaluator") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 6, 5, rng);
    const double got = losses::patch_nce(ps, 0.07).scalar();
    CHECK(got ==
          doctest::Approx(oracles::patch_nce_brute(sims_of(ps), 0.07)).epsilon(1e-11));
  }
}

TEST_CASE("patch_nce rejects n < 2") {
  Graph g;
  Tensor one = Tensor::zeros({1, 3});
  one.values[0] = 1.0;
  losses::PatchSet ps{g.leaf(one), g.leaf(one)};
  CHECK_THROWS_WITH_AS(losses::patch_nce(ps, 1.0), doctest::Contains("n >= 2"), Error);
}

TEST_CASE("monce_weights hand softmax for two negatives") {
  Graph g;
  // 3x3 similarity matrix whose first row has off-diagonal sims [1, 0]
  Tensor sims = Tensor::zeros({3, 3});
  sims.values = {0.9, 1.0, 0.0,
                 0.2, 0.8, 0.5,
                 0.1, 0.3, 0.7};
  const double e = std::exp(1.0);
  Var hard = losses::monce_weights(g.leaf(sims), true, 1.0);
  CHECK(hard.tensor().shape == Shape{3, 2});
  CHECK(hard.tensor().values[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(hard.tensor().values[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  Var easy = losses::monce_weights(g.leaf(sims), false, 1.0);
  CHECK(easy.tensor().values[0] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  CHECK(easy.tensor().values[1] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
}

TEST_CASE("monce_weights of constant similarities are uniform") {
  Graph g;
  Var w = losses::monce_weights(g.leaf(Tensor::full({4, 4}, 0.3)), true, 0.5);
  for (double v : w.tensor().values)
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("weight rows are positive and sum to 1 within 1e-12") {
  std::mt19937_64 rng(38);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    Tensor sims = Tensor::zeros({5, 5});
    for (double& v : sims.values) v = dist(rng);
    for (bool hard : {true, false}) {
      Var w = losses::monce_weights(g.leaf(sims), hard, 0.7);
      for (int64_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < 4; ++j) {
          const double v = w.tensor().values[static_cast<size_t>(i * 4 + j)];
          CHECK(v > 0.0);
          row += v;
        }
        CHECK(std::abs(row - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("monce with uniform similarities and Q=1 equals patch_nce") {
  Graph g;
  losses::PatchSet ps = uniform_sim_patch_set(g, 5);
  const double nce = losses::patch_nce(ps, 0.07).scalar();
  const double monce = losses::monce_loss(ps, 0.07, 1.0, 1.0, true).scalar();
  CHECK(monce == doctest::Approx(nce).epsilon(1e-12));
}

TEST_CASE("monce with Q=0 is zero") {
  std::mt19937_64 rng(39);
  Graph g;
  losses::PatchSet ps = random_patch_set(g, 4, 6, rng);
  CHECK(std::abs(losses::monce_loss(ps, 0.07, 1.0, 0.0, true).scalar()) <= 1e-12);
}

TEST_CASE("monce matches the brute-force evaluator") {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 4, 5, rng);
    for (bool hard : {true, false}) {
      const double got = losses::monce_loss(ps, 0.2, 0.8, 1.3, hard).scalar();
      const double want = oracles::monce_brute(sims_of(ps), 0.2, 0.8, 1.3, hard);
      CHECK(got == doctest::Approx(want).epsilon(1e-11));
    }
  }
}

TEST_CASE("sence_force endpoints and the Eq-7 style evaluation") {
  CHECK(losses::sence_force(0.8, 0.0) == 0.8);
  CHECK(losses::sence_force(0.8, 1.0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(losses::sence_force(0.8, 0.592) == doctest::Approx(0.4448).epsilon(1e-12));
  CHECK_THROWS_AS(losses::sence_force(0.5, 1.5), Error);
}

TEST_CASE("sence reduces to patch_nce at mpa=0.5, Q=1") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 6, 4, rng);
    const double nce = losses::patch_nce(ps, 0.07).scalar();
    const double sence = losses::sence_loss(ps, 0.5, 0.07, 1.0, 1.0).scalar();
    CHECK(sence == doctest::Approx(nce).epsilon(1e-12));
  }
}

TEST_CASE("sence endpoints reduce to monce hard and easy") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 5, 4, rng);
    CHECK(losses::sence_loss(ps, 0.0, 0.1, 0.9, 1.2).scalar() ==
          doctest::Approx(losses::monce_loss(ps, 0.1, 0.9, 1.2, true).scalar())
              .epsilon(1e-12));
    CHECK(losses::sence_loss(ps, 1.0, 0.1, 0.9, 1.2).scalar() ==
          doctest::Approx(losses::monce_loss(ps, 0.1, 0.9, 1.2, false).scalar())
              .epsilon(1e-12));
  }
}

TEST_CASE("sence matches the brute-force evaluator") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 4, 5, rng);
    const double got = losses::sence_loss(ps, 0.75, 0.2, 0.8, 1.3).scalar();
    const double want = oracles::sence_brute(sims_of(ps), 0.75, 0.2, 0.8, 1.3);
    CHECK(got == doctest::Approx(want).epsilon(1e-11));
  }
}

TEST_CASE("sence weight ordering flips around mpa = 0.5") {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> pick_lo(0.0, 0.49);
  std::uniform_real_distribution<double> pick_hi(0.51, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 5, 6, rng);
    Var sims = losses::similarity_matrix(ps);
    for (bool low_regime : {true, false}) {
      const double mpa = low_regime ? pick_lo(rng) : pick_hi(rng);
      Var off = g.reshape(g.gather(sims, losses::offdiag_indices(5)), {5, 4});
      Var force = (1.0 - mpa) * off + mpa * (1.0 - off);
      Var w = g.softmax(force / 1.0, 1);
      for (int64_t i = 0; i < 5; ++i) {
        int64_t most = 0, least = 0;
        for (int64_t j = 1; j < 4; ++j) {
          const auto& vals = off.tensor().values;
          if (vals[static_cast<size_t>(i * 4 + j)] > vals[static_cast<size_t>(i * 4 + most)]) most = j;
          if (vals[static_cast<size_t>(i * 4 + j)] < vals[static_cast<size_t>(i * 4 + least)]) least = j;
        }
        const auto& wv = w.tensor().values;
        const double w_most = wv[static_cast<size_t>(i * 4 + most)];
        const double w_least = wv[static_cast<size_t>(i * 4 + least)];
        if (low_regime)
          CHECK(w_most > w_least);
        else
          CHECK(w_most < w_least);
      }
    }
  }
}

TEST_CASE("flipping the similarity orientation swaps the embedding roles") {
  std::mt19937_64 rng(45);
  Graph g;
  losses::PatchSet ps = random_patch_set(g, 5, 4, rng);
  losses::PatchSet swapped{ps.positives, ps.anchors};
  // anchor/negative roles flip, so the flag on one set equals the default
  // orientation on the role-swapped set
  CHECK(losses::patch_nce(ps, 0.2, true).scalar() ==
        losses::patch_nce(swapped, 0.2, false).scalar());
  CHECK(losses::sence_loss(ps, 0.3, 0.2, 1.0, 1.0, true).scalar() ==
        losses::sence_loss(swapped, 0.3, 0.2, 1.0, 1.0, false).scalar());
  // the positive similarities sit on the diagonal either way
  CHECK(losses::patch_nce(ps, 0.2, true).scalar() > 0.0);
}

TEST_CASE("composite objective arithmetic and variant gating") {
  Graph g;
  losses::ObjectiveParts parts;
  parts.gan = g.constant(0.0);
  parts.nce = g.constant(0.0);
  parts.geom = g.constant(2.0);

  losses::LossConfig cfg;
  cfg.geom_variant = losses::GeomVariant::kTps;
  CHECK(losses::composite_objective(g, parts, cfg).scalar() ==
        doctest::Approx(0.2).epsilon(1e-15));

  cfg.lambda_gan = cfg.lambda_nce = cfg.lambda_geom = 0.0;
  CHECK(losses::composite_objective(g, parts, cfg).scalar() == 0.0);

  losses::LossConfig m1;
  m1.nce_variant = losses::NceVariant::kPatchNce;
  m1.geom_variant = losses::GeomVariant::kNone;
  losses::ObjectiveParts no_geom;
  no_geom.gan = g.constant(1.0);
  no_geom.nce = g.constant(2.0);
  CHECK(losses::composite_objective(g, no_geom, m1).scalar() ==
        doctest::Approx(3.0).epsilon(1e-15));

  losses::LossConfig needs_geom;
  needs_geom.geom_variant = losses::GeomVariant::kPtl;
  CHECK_THROWS_WITH_AS(losses::composite_objective(g, no_geom, needs_geom),
                       doctest::Contains("missing the ptl"), Error);
}

TEST_CASE("every loss passes finite differences") {
  for (const auto& c : raingen::harness::loss_grad_cases()) {
    CAPTURE(c.name);
    const auto result = raingen::harness::run_grad_case(c, 5);
    CHECK(result.pass);
  }
}

TEST_CASE("an injected sign error in the tps gradient is caught by name") {
  raingen::harness::GradCase broken;
  broken.name = "tps_loss";
  broken.tolerance = 1e-4;
  // autodiff side computes the loss with one term's sign flipped
  broken.autodiff_fn = [](Graph& g, const std::vector<Var>& in) {
    Var hi = g.maximum(in[0], in[1]);
    Var lo = g.minimum(in[0], in[1]);
    return 2.0 * g.mean(g.relu(in[2] - hi) - g.relu(lo - in[2]));
  };
  broken.value_fn = [](Graph& g, const std::vector<Var>& in) {
    return losses::tps_loss(in[0], in[1], in[2]);
  };
  broken.make_inputs = [](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.1, 0.9);
    Tensor dx = Tensor::zeros({3, 3}), dy = Tensor::zeros({3, 3}), dz = Tensor::zeros({3, 3});
    for (double& v : dx.values) v = dist(rng);
    for (size_t i = 0; i < dy.values.size(); ++i) dy.values[i] = dx.values[i] + 0.02;
    for (size_t i = 0; i < dz.values.size(); ++i) dz.values[i] = dx.values[i] - 0.05;
    return std::vector<Tensor>{dx, dy, dz};
  };
  const auto result = raingen::harness::run_grad_case(broken, 3);
  CHECK_FALSE(result.pass);
  CHECK(result.name == "tps_loss");
}

TEST_SUITE_END();
