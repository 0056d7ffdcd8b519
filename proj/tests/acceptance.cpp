// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any hard criterion fails. Criterion 7(c) is
// a soft diagnostic: it is printed but does not gate the exit status.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "raingen/config.hpp"
#include "raingen/gradsuite.hpp"
#include "raingen/losses.hpp"
#include "raingen/metrics.hpp"
#include "raingen/semantic.hpp"
#include "raingen/synthdata.hpp"
#include "raingen/trainer.hpp"

namespace fs = std::filesystem;
namespace harness = raingen::harness;
namespace losses = raingen::losses;
namespace metrics = raingen::metrics;
namespace semantic = raingen::semantic;
namespace synth = raingen::synth;
using raingen::ad::Graph;
using raingen::ad::Tensor;
using raingen::ad::Var;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail, bool soft = false) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : (soft ? "soft" : "FAIL"),
              criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass && !soft) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

fs::path work_dir() {
  const char* env = std::getenv("RAINGEN_ACCEPT_DIR");
  fs::path dir = env ? fs::path(env) : fs::temp_directory_path() / "raingen_acceptance";
  fs::create_directories(dir);
  return dir;
}

losses::PatchSet random_patch_set(Graph& g, int64_t n, int64_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor a = Tensor::zeros({n, d});
  Tensor p = Tensor::zeros({n, d});
  for (double& v : a.values) v = dist(rng);
  for (double& v : p.values) v = dist(rng);
  return {g.l2_normalize(g.leaf(a), 1), g.l2_normalize(g.leaf(p), 1)};
}

// ---------------------------------------------------------------------------
// 1. gradient suite for every loss: rel err <= 1e-4, 20 seeds, step 1e-5
void criterion_gradients() {
  const auto t0 = Clock::now();
  harness::GradSuiteReport rep;
  for (const auto& c : harness::loss_grad_cases())
    rep.cases.push_back(harness::run_grad_case(c, 20));
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  double worst = 0.0;
  std::string worst_name = "-";
  for (const auto& c : rep.cases) {
    if (c.max_rel_err > worst) {
      worst = c.max_rel_err;
      worst_name = c.name;
    }
  }
  const bool pass = rep.all_pass() && secs < 60.0;
  report(1, pass,
         "loss gradient suite: " + std::to_string(rep.cases.size()) +
             " cases x 20 seeds, worst rel err " + fmt(worst) + " (" + worst_name +
             "), " + fmt(secs) + "s");
}

// ---------------------------------------------------------------------------
// 2. algebraic reductions at 1e-12 on 50 random N=8 patch sets
void criterion_reductions() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    losses::PatchSet ps = random_patch_set(g, 8, 6, rng);
    const double tau = 0.07, beta = 1.0;
    const double nce = losses::patch_nce(ps, tau).scalar();
    worst = std::max(worst, rel(losses::sence_loss(ps, 0.5, tau, beta, 1.0).scalar(), nce));
    worst = std::max(worst, rel(losses::sence_loss(ps, 0.0, tau, beta, 1.3).scalar(),
                                losses::monce_loss(ps, tau, beta, 1.3, true).scalar()));
    worst = std::max(worst, rel(losses::sence_loss(ps, 1.0, tau, beta, 1.3).scalar(),
                                losses::monce_loss(ps, tau, beta, 1.3, false).scalar()));
  }
  // uniform-similarity construction: anchors e_i, positives renormalized
  // gamma*1 + alpha*e_j
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    const int64_t n = 8;
    std::uniform_real_distribution<double> pick(0.1, 0.9);
    std::mt19937_64 local(3000 + trial);
    const double alpha = pick(local), gamma = pick(local);
    Tensor a = Tensor::zeros({n, n});
    Tensor p = Tensor::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) {
      a.values[static_cast<size_t>(i * n + i)] = 1.0;
      for (int64_t k = 0; k < n; ++k)
        p.values[static_cast<size_t>(i * n + k)] = gamma + (k == i ? alpha : 0.0);
    }
    losses::PatchSet ps{g.leaf(a), g.l2_normalize(g.leaf(p), 1)};
    worst = std::max(worst, rel(losses::monce_loss(ps, 0.07, 0.8, 1.0, true).scalar(),
                                losses::patch_nce(ps, 0.07).scalar()));
  }
  report(2, worst <= 1e-12,
         "algebraic reductions on 50 random + 50 uniform patch sets, worst rel dev " +
             fmt(worst));
}

// ---------------------------------------------------------------------------
// 3. tps geometry: sign, exact-zero iff betweenness, collinear witness
void criterion_tps_geometry() {
  std::mt19937_64 rng(2025);
  std::uniform_real_distribution<double> dist(0.01, 0.99);
  bool all_ok = true;
  int between_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Graph g;
    Tensor dx = Tensor::zeros({3, 4}), dy = Tensor::zeros({3, 4}), dz = Tensor::zeros({3, 4});
    for (double& v : dx.values) v = dist(rng);
    for (double& v : dy.values) v = dist(rng);
    const bool force_between = trial % 4 == 0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (size_t i = 0; i < dz.values.size(); ++i)
      dz.values[i] = force_between
                         ? dx.values[i] + unit(rng) * (dy.values[i] - dx.values[i])
                         : dist(rng);
    bool between = true;
    for (size_t i = 0; i < dz.values.size(); ++i) {
      const double lo = std::min(dx.values[i], dy.values[i]);
      const double hi = std::max(dx.values[i], dy.values[i]);
      if (dz.values[i] < lo || dz.values[i] > hi) between = false;
    }
    if (between) ++between_cases;
    const double v =
        losses::tps_loss(g.leaf(dx), g.leaf(dy), g.leaf(dz)).scalar();
    if (v < 0.0 || (v == 0.0) != between) all_ok = false;
  }

  // constructed boundary cases: endpoints and midpoint hit zero exactly
  {
    Graph g;
    Tensor dx = Tensor::zeros({2, 2}), dy = Tensor::zeros({2, 2});
    for (double& v : dx.values) v = dist(rng);
    for (double& v : dy.values) v = dist(rng);
    if (losses::tps_loss(g.leaf(dx), g.leaf(dy), g.leaf(dx)).scalar() != 0.0)
      all_ok = false;
    if (losses::tps_loss(g.leaf(dx), g.leaf(dy), g.leaf(dy)).scalar() != 0.0)
      all_ok = false;
  }

  // Fig-4-style collinear extension witness on a dyadic grid
  bool witness_ok;
  {
    Graph g;
    std::vector<double> x = {0.25, 0.5, 0.75, 0.25};
    std::vector<double> y = {0.375, 0.4375, 0.625, 0.375};
    std::vector<double> z(4);
    for (size_t i = 0; i < 4; ++i) z[i] = x[i] + 2.0 * (y[i] - x[i]);
    Var vx = g.leaf(Tensor({2, 2}, x));
    Var vy = g.leaf(Tensor({2, 2}, y));
    Var vz = g.leaf(Tensor({2, 2}, z));
    const double ptl = losses::ptl_loss(vx, vy, vz).scalar();
    const double tps = losses::tps_loss(vx, vy, vz).scalar();
    witness_ok = ptl == 0.0 && tps > 0.0;
  }
  report(3, all_ok && witness_ok,
         "tps geometry on 1000 triples (" + std::to_string(between_cases) +
             " betweenness cases) and the collinear witness (ptl 0, tps > 0)");
}

// ---------------------------------------------------------------------------
// 4. weight regime flips around mpa = 0.5 (100 random instances)
void criterion_weight_regime() {
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> lo_regime(0.0, 0.4999);
  std::uniform_real_distribution<double> hi_regime(0.5001, 1.0);
  bool all_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    const int64_t n = 6;
    losses::PatchSet ps = random_patch_set(g, n, 8, rng);
    Var sims = losses::similarity_matrix(ps);
    Var off = g.reshape(g.gather(sims, losses::offdiag_indices(n)), {n, n - 1});
    const bool low = trial % 2 == 0;
    const double mpa = low ? lo_regime(rng) : hi_regime(rng);
    Var force = (1.0 - mpa) * off + mpa * (1.0 - off);
    Var w = g.softmax(force / 1.0, 1);
    const auto& sv = off.tensor().values;
    const auto& wv = w.tensor().values;
    for (int64_t i = 0; i < n; ++i) {
      int64_t most = 0, least = 0;
      for (int64_t j = 1; j < n - 1; ++j) {
        if (sv[static_cast<size_t>(i * (n - 1) + j)] > sv[static_cast<size_t>(i * (n - 1) + most)]) most = j;
        if (sv[static_cast<size_t>(i * (n - 1) + j)] < sv[static_cast<size_t>(i * (n - 1) + least)]) least = j;
      }
      const double w_most = wv[static_cast<size_t>(i * (n - 1) + most)];
      const double w_least = wv[static_cast<size_t>(i * (n - 1) + least)];
      if (low ? (w_most <= w_least) : (w_most >= w_least)) all_ok = false;
    }
  }
  report(4, all_ok,
         "sence weights favor the most-similar negative for mpa<0.5 and flip above");
}

// ---------------------------------------------------------------------------
// 5. semantic metrics vs brute force: exhaustive 2x2 and 100 random 8x8
void criterion_semantic_oracle() {
  bool all_ok = true;
  double worst = 0.0;
  // all 2x2 maps over 3 classes: 81 x 81 ordered pairs
  for (int a = 0; a < 81; ++a) {
    for (int b = 0; b < 81; ++b) {
      semantic::SegMap sx(2, 2, 3), sy(2, 2, 3);
      int va = a, vb = b;
      for (int i = 0; i < 4; ++i) {
        sx.classes[static_cast<size_t>(i)] = static_cast<uint8_t>(va % 3);
        sy.classes[static_cast<size_t>(i)] = static_cast<uint8_t>(vb % 3);
        va /= 3;
        vb /= 3;
      }
      const double m1 = semantic::mpa(sx, sy);
      const double m2 = oracles::mpa_brute(sx, sy);
      const double u1 = semantic::miou(sx, sy);
      const double u2 = oracles::miou_brute(sx, sy);
      worst = std::max({worst, std::abs(m1 - m2), std::abs(u1 - u2)});
      if (m1 < 0.0 || m1 > 1.0 || u1 < 0.0 || u1 > 1.0) all_ok = false;
    }
  }
  std::mt19937_64 rng(2027);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    semantic::SegMap sx(8, 8, 4), sy(8, 8, 4);
    for (auto& c : sx.classes) c = static_cast<uint8_t>(cls(rng));
    for (auto& c : sy.classes) c = static_cast<uint8_t>(cls(rng));
    worst = std::max({worst, std::abs(semantic::mpa(sx, sy) - oracles::mpa_brute(sx, sy)),
                      std::abs(semantic::miou(sx, sy) - oracles::miou_brute(sx, sy))});
  }
  report(5, all_ok && worst <= 1e-12,
         "mpa/miou vs brute force: exhaustive 2x2 (6561 pairs) + 100 random 8x8, worst "
         "abs dev " +
             fmt(worst));
}

// ---------------------------------------------------------------------------
// 6. metric sanity: zero on identical sets, strict growth across mean shifts
void criterion_metric_sanity() {
  bool all_ok = true;
  std::mt19937_64 id_rng(77);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto gauss = [&](std::mt19937_64& rng, int n, double mean) {
    std::vector<metrics::FeatureVec> out;
    for (int i = 0; i < n; ++i) {
      metrics::FeatureVec v(4);
      for (double& x : v) x = mean + dist(rng);
      out.push_back(std::move(v));
    }
    return out;
  };
  auto fixed = gauss(id_rng, 30, 0.3);
  if (metrics::mmd2(fixed, fixed) != 0.0) all_ok = false;
  if (metrics::energy_distance(fixed, fixed) != 0.0) all_ok = false;

  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(9000 + seed);
    auto ref = gauss(rng, 100, 0.0);
    auto s0 = gauss(rng, 100, 0.0);
    auto s1 = gauss(rng, 100, 0.5);
    auto s2 = gauss(rng, 100, 1.0);
    const double m0 = metrics::mmd2(ref, s0), m1 = metrics::mmd2(ref, s1),
                 m2 = metrics::mmd2(ref, s2);
    const double e0 = metrics::energy_distance(ref, s0),
                 e1 = metrics::energy_distance(ref, s1),
                 e2 = metrics::energy_distance(ref, s2);
    if (!(m0 < m1 && m1 < m2 && e0 < e1 && e1 < e2)) all_ok = false;
  }
  report(6, all_ok,
         "mmd2/ed zero on identical sets, strictly increasing over shifts {0,0.5,1}, 20 "
         "seeds");
}

// ---------------------------------------------------------------------------
// 7 + 8 + 9: end-to-end runs (dataset, M7 training, determinism, ablation)
struct EndToEndResult {
  fs::path manifest;
  fs::path run_dir;
};

EndToEndResult criterion_end_to_end() {
  const fs::path dir = work_dir();
  const auto t0 = Clock::now();

  synth::BuildConfig data_cfg;
  data_cfg.root = dir / "data";
  data_cfg.train_per_domain = 200;
  data_cfg.test_per_domain = 24;
  data_cfg.image_size = 64;
  data_cfg.seed = 11;
  synth::DatasetManifest manifest = synth::build_dataset(data_cfg);

  harness::TrainConfig cfg;
  cfg.manifest = data_cfg.root / "manifest.tsv";
  cfg.out_dir = dir / "m7";
  cfg.variant = "M7";
  harness::apply_variant(cfg);
  cfg.epochs = 50;
  cfg.crop = 64;
  cfg.seed = 7;
  cfg.validate();

  bool finite_ok = true, trained = false;
  double ratio = std::numeric_limits<double>::infinity();
  double p2s_first = 0.0, p2s_last = 0.0;
  std::string note;
  try {
    harness::TrainResult result = harness::train(cfg);
    trained = true;
    for (const harness::EpochLog& log : result.logs) {
      for (double v : {log.lr, log.loss_d, log.loss_gan, log.loss_nce, log.loss_geom,
                       log.loss_total, log.point_to_segment})
        if (!std::isfinite(v)) finite_ok = false;
    }
    p2s_first = result.logs.front().point_to_segment;
    p2s_last = result.logs.back().point_to_segment;
    metrics::DomainReport rep =
        harness::evaluate(cfg, result.checkpoint_path, cfg.out_dir / "report.jsonl");
    ratio = rep.mmd2_gen_rainy / rep.mmd2_clear_rainy;
    note = "mmd2 gen/baseline = " + fmt(rep.mmd2_gen_rainy) + "/" +
           fmt(rep.mmd2_clear_rainy) + " (ratio " + fmt(ratio) + ")";
  } catch (const std::exception& e) {
    note = std::string("run failed: ") + e.what();
  }
  const double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
  const bool pass =
      trained && finite_ok && ratio <= 0.8 && minutes <= 60.0;
  report(7, pass,
         "M7 end-to-end (200/domain, 64x64, 50 epochs): " + note + ", " + fmt(minutes) +
             " min; (a) finite=" + (finite_ok ? "yes" : "no") +
             " (b) ratio<=0.8=" + (ratio <= 0.8 ? "yes" : "no"));
  report(7, p2s_last < p2s_first,
         "(c, soft) point-to-segment epoch50 " + fmt(p2s_last) + " vs epoch1 " +
             fmt(p2s_first),
         true);
  return {cfg.manifest, cfg.out_dir};
}

void criterion_determinism(const fs::path& manifest) {
  const fs::path dir = work_dir();
  harness::TrainConfig base;
  base.manifest = manifest;
  base.variant = "M7";
  harness::apply_variant(base);
  base.epochs = 2;
  base.crop = 32;
  base.patches = 32;
  base.dims.base_channels = 8;
  base.dims.res_blocks = 2;
  base.dims.hidden_dim = 16;
  base.dims.embed_dim = 16;
  base.seed = 21;

  harness::TrainConfig c1 = base, c2 = base;
  c1.out_dir = dir / "det_a";
  c2.out_dir = dir / "det_b";
  bool pass = false;
  std::string note;
  try {
    harness::TrainResult r1 = harness::train(c1);
    harness::TrainResult r2 = harness::train(c2);
    const bool ckpt_same = file_bytes(r1.checkpoint_path) == file_bytes(r2.checkpoint_path);
    const bool log_same = file_bytes(r1.log_path) == file_bytes(r2.log_path);
    pass = ckpt_same && log_same;
    note = std::string("checkpoints ") + (ckpt_same ? "identical" : "differ") +
           ", logs " + (log_same ? "identical" : "differ");
  } catch (const std::exception& e) {
    note = std::string("run failed: ") + e.what();
  }
  report(8, pass, "two same-seed M7 runs: " + note);
}

void criterion_ablation(const fs::path& manifest) {
  const fs::path dir = work_dir();
  harness::TrainConfig base;
  base.manifest = manifest;
  base.out_dir = dir / "ablation";
  base.epochs = 2;
  base.crop = 32;
  base.patches = 16;
  base.dims.base_channels = 8;
  base.dims.res_blocks = 2;
  base.dims.hidden_dim = 16;
  base.dims.embed_dim = 16;
  base.seed = 31;

  struct Want {
    const char* id;
    const char* geom;
    const char* nce;
  };
  const Want wants[] = {
      {"M1", "none", "patchnce"}, {"M2", "ptl", "patchnce"}, {"M3", "tps", "patchnce"},
      {"M4", "none", "monce_hard"}, {"M5", "none", "sence_mpa"},
      {"M6", "tps", "sence_miou"}, {"M7", "tps", "sence_mpa"},
  };

  bool pass = false;
  std::string note;
  try {
    fs::create_directories(base.out_dir);
    auto rows = harness::ablate(base, {"M1", "M2", "M3", "M4", "M5", "M6", "M7"},
                                base.out_dir / "ablation.tsv");
    bool flags_ok = rows.size() == 7;
    for (size_t i = 0; i < rows.size() && flags_ok; ++i) {
      flags_ok = rows[i].variant == wants[i].id &&
                 rows[i].geom_variant == wants[i].geom &&
                 rows[i].nce_variant == wants[i].nce;
    }
    bool m1_zero_geom = true;
    for (const harness::EpochLog& log :
         harness::load_train_log(dir / "ablation" / "M1" / "train_log.jsonl"))
      if (log.loss_geom != 0.0) m1_zero_geom = false;
    pass = flags_ok && m1_zero_geom;
    note = std::string("7 rows, flags ") + (flags_ok ? "match" : "MISMATCH") +
           ", M1 geometric term " + (m1_zero_geom ? "zero throughout" : "NONZERO");
  } catch (const std::exception& e) {
    note = std::string("run failed: ") + e.what();
  }
  report(9, pass, "ablation driver M1..M7: " + note);
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_reductions();
  criterion_tps_geometry();
  criterion_weight_regime();
  criterion_semantic_oracle();
  criterion_metric_sanity();
  EndToEndResult e2e = criterion_end_to_end();
  criterion_determinism(e2e.manifest);
  criterion_ablation(e2e.manifest);

  if (g_failures > 0) {
    std::printf("ACCEPTANCE: %d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("ACCEPTANCE: all hard criteria passed\n");
  return 0;
}
