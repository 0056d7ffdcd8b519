#include "raingen/losses.hpp"

#include <cmath>
#include <map>

namespace raingen::losses {

using ad::Graph;
using ad::Tensor;
using ad::Var;

DiscriminatorMap::DiscriminatorMap(int h, int w, std::vector<double> values)
    : height(h), width(w), p(std::move(values)) {
  RG_CHECK(static_cast<int64_t>(p.size()) == static_cast<int64_t>(h) * w,
           "discriminator map ", h, "x", w, " does not match ", p.size(), " values");
  for (double v : p)
    RG_CHECK(v > 0.0 && v < 1.0, "discriminator map entry ", v,
             " outside the open interval (0,1)");
}

const char* nce_variant_name(NceVariant v) {
  switch (v) {
    case NceVariant::kPatchNce: return "patchnce";
    case NceVariant::kMonceHard: return "monce_hard";
    case NceVariant::kMonceEasy: return "monce_easy";
    case NceVariant::kSenceMpa: return "sence_mpa";
    case NceVariant::kSenceMiou: return "sence_miou";
  }
  return "?";
}

const char* geom_variant_name(GeomVariant v) {
  switch (v) {
    case GeomVariant::kNone: return "none";
    case GeomVariant::kPtl: return "ptl";
    case GeomVariant::kTps: return "tps";
  }
  return "?";
}

NceVariant parse_nce_variant(const std::string& name) {
  for (NceVariant v : {NceVariant::kPatchNce, NceVariant::kMonceHard,
                       NceVariant::kMonceEasy, NceVariant::kSenceMpa,
                       NceVariant::kSenceMiou})
    if (name == nce_variant_name(v)) return v;
  throw Error("unknown nce variant: " + name);
}

GeomVariant parse_geom_variant(const std::string& name) {
  for (GeomVariant v : {GeomVariant::kNone, GeomVariant::kPtl, GeomVariant::kTps})
    if (name == geom_variant_name(v)) return v;
  throw Error("unknown geom variant: " + name);
}

void LossConfig::validate() const {
  RG_CHECK(tau > 0.0, "tau must be positive, got ", tau);
  RG_CHECK(beta > 0.0, "beta must be positive, got ", beta);
  RG_CHECK(q > 0.0 || q == 0.0, "q must be non-negative, got ", q);
  RG_CHECK(lambda_gan >= 0.0 && lambda_nce >= 0.0 && lambda_geom >= 0.0,
           "lambda weights must be non-negative");
}

void validate_patch_set(const PatchSet& ps) {
  const Tensor& a = ps.anchors.tensor();
  const Tensor& p = ps.positives.tensor();
  RG_CHECK(a.rank() == 2 && p.rank() == 2, "patch set must hold [N,d] matrices");
  RG_CHECK(a.shape == p.shape, "patch set shape mismatch: ", ad::shape_str(a.shape),
           " vs ", ad::shape_str(p.shape));
  RG_CHECK(a.shape[0] >= 2, "patch set needs n >= 2, got n = ", a.shape[0]);
  const int64_t n = a.shape[0], d = a.shape[1];
  for (const Tensor* t : {&a, &p}) {
    for (int64_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double v = t->values[static_cast<size_t>(i * d + k)];
        sq += v * v;
      }
      RG_CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-6, "patch row ", i,
               " is not unit-norm: ", std::sqrt(sq));
    }
  }
}

Var dmap_leaf(Graph& g, const DiscriminatorMap& m, bool requires_grad) {
  Tensor t({m.height, m.width}, m.p);
  t.requires_grad = requires_grad;
  return g.leaf(std::move(t));
}

namespace {
void check_map_shapes(Var dx, Var dy, Var dz, const char* name) {
  const auto& sx = dx.shape();
  const auto& sy = dy.shape();
  const auto& sz = dz.shape();
  RG_CHECK(sx == sy && sy == sz, name, ": map shape mismatch: ", ad::shape_str(sx),
           " vs ", ad::shape_str(sy), " vs ", ad::shape_str(sz));
}
}  // namespace

Var tps_loss(Var dx, Var dy, Var dz) {
  check_map_shapes(dx, dy, dz, "tps_loss");
  Graph& g = *dx.graph();
  // max/min select values exactly, so the slack is exactly zero whenever dz
  // lies in the closed elementwise interval [min(dx,dy), max(dx,dy)].
  Var hi = g.maximum(dx, dy);
  Var lo = g.minimum(dx, dy);
  Var slack = g.relu(dz - hi) + g.relu(lo - dz);
  return 2.0 * g.mean(slack);
}

Var ptl_loss(Var dx, Var dy, Var dz) {
  check_map_shapes(dx, dy, dz, "ptl_loss");
  Graph& g = *dx.graph();
  const Tensor& tx = dx.tensor();
  RG_CHECK(tx.values != dy.tensor().values,
           "ptl_loss: dx == dy, the line through them is undefined");
  const int64_t n = tx.numel();
  Var x = g.reshape(dx, {n});
  Var y = g.reshape(dy, {n});
  Var z = g.reshape(dz, {n});
  Var zx = z - x;
  Var yx = y - x;
  Var t = g.sum(zx * yx) / g.sum(yx * yx);
  Var resid = zx - t * yx;
  return g.pow(g.sum(resid * resid), 0.5) / std::sqrt(static_cast<double>(n));
}

GanLossPair gan_losses(Var d_real, Var d_fake) {
  Graph& g = *d_real.graph();
  Var real = g.clamp(d_real, 1e-7, 1.0 - 1e-7);
  Var fake = g.clamp(d_fake, 1e-7, 1.0 - 1e-7);
  Var d_loss = -g.mean(g.log(real)) - g.mean(g.log(1.0 - fake));
  Var g_loss = -g.mean(g.log(fake));
  return {d_loss, g_loss};
}

std::vector<int64_t> diag_indices(int64_t n) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i * n + i;
  return idx;
}

std::vector<int64_t> offdiag_indices(int64_t n) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(n * (n - 1)));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (j != i) idx.push_back(i * n + j);
  return idx;
}

namespace {

using SharedIndices = std::shared_ptr<const std::vector<int64_t>>;

// The NCE losses rebuild the same diagonal/off-diagonal index sets every
// iteration; sharing them keeps the tape from copying ~n^2 indices per op.
SharedIndices cached_diag(int64_t n) {
  static thread_local std::map<int64_t, SharedIndices> cache;
  auto it = cache.find(n);
  if (it == cache.end())
    it = cache.emplace(n, std::make_shared<const std::vector<int64_t>>(diag_indices(n)))
             .first;
  return it->second;
}

SharedIndices cached_offdiag(int64_t n) {
  static thread_local std::map<int64_t, SharedIndices> cache;
  auto it = cache.find(n);
  if (it == cache.end())
    it = cache
             .emplace(n, std::make_shared<const std::vector<int64_t>>(offdiag_indices(n)))
             .first;
  return it->second;
}

}  // namespace

Var similarity_matrix(const PatchSet& ps, bool negatives_from_generated) {
  Graph& g = *ps.anchors.graph();
  if (negatives_from_generated) return g.matmul_bt(ps.positives, ps.anchors);
  return g.matmul_bt(ps.anchors, ps.positives);
}

namespace {

struct NcePieces {
  Var pos;      // [N]  positive-pair similarities
  Var offdiag;  // [N, N-1] anchor-negative similarities
};

NcePieces split_similarities(Graph& g, Var sims) {
  const int64_t n = sims.shape()[0];
  NcePieces out;
  out.pos = g.gather(sims, cached_diag(n));
  out.offdiag = g.reshape(g.gather(sims, cached_offdiag(n)), {n, n - 1});
  return out;
}

// -sum_i log(pos_i / denom_i) rewritten as sum_i(log denom_i - pos_i/tau).
Var nce_from_denominator(Graph& g, Var pos, Var denom, double tau) {
  return g.sum(g.log(denom) - pos / tau);
}

Var weighted_denominator(Graph& g, const NcePieces& p, Var weights, double tau,
                         double q) {
  const int64_t n = p.pos.shape()[0];
  Var pushed = g.sum(weights * g.exp(p.offdiag / tau), 1);
  return g.exp(p.pos / tau) + (q * static_cast<double>(n - 1)) * pushed;
}

}  // namespace

Var patch_nce(const PatchSet& ps, double tau, bool negatives_from_generated) {
  validate_patch_set(ps);
  RG_CHECK(tau > 0.0, "patch_nce: tau must be positive, got ", tau);
  Graph& g = *ps.anchors.graph();
  NcePieces p = split_similarities(g, similarity_matrix(ps, negatives_from_generated));
  Var denom = g.exp(p.pos / tau) + g.sum(g.exp(p.offdiag / tau), 1);
  return nce_from_denominator(g, p.pos, denom, tau);
}

Var monce_weights(Var sims, bool hard, double beta) {
  RG_CHECK(beta > 0.0, "monce_weights: beta must be positive, got ", beta);
  Graph& g = *sims.graph();
  RG_CHECK(sims.tensor().rank() == 2 && sims.shape()[0] == sims.shape()[1],
           "monce_weights expects a square similarity matrix, got ",
           ad::shape_str(sims.shape()));
  const int64_t n = sims.shape()[0];
  Var off = g.reshape(g.gather(sims, cached_offdiag(n)), {n, n - 1});
  Var arg = hard ? off : 1.0 - off;
  return g.softmax(arg / beta, 1);
}

Var monce_loss(const PatchSet& ps, double tau, double beta, double q, bool hard,
               bool negatives_from_generated) {
  validate_patch_set(ps);
  RG_CHECK(tau > 0.0 && beta > 0.0, "monce_loss: tau and beta must be positive");
  Graph& g = *ps.anchors.graph();
  Var sims = similarity_matrix(ps, negatives_from_generated);
  NcePieces p = split_similarities(g, sims);
  Var w = monce_weights(sims, hard, beta);
  return nce_from_denominator(g, p.pos, weighted_denominator(g, p, w, tau, q), tau);
}

double sence_force(double sim, double mpa) {
  RG_CHECK(mpa >= 0.0 && mpa <= 1.0, "sence_force: mpa must be in [0,1], got ", mpa);
  return (1.0 - mpa) * sim + mpa * (1.0 - sim);
}

Var sence_loss(const PatchSet& ps, double mpa, double tau, double beta, double q,
               bool negatives_from_generated) {
  validate_patch_set(ps);
  RG_CHECK(mpa >= 0.0 && mpa <= 1.0, "sence_loss: mpa must be in [0,1], got ", mpa);
  RG_CHECK(tau > 0.0 && beta > 0.0, "sence_loss: tau and beta must be positive");
  Graph& g = *ps.anchors.graph();
  Var sims = similarity_matrix(ps, negatives_from_generated);
  NcePieces p = split_similarities(g, sims);
  // mpa is a per-pair constant, not differentiated.
  Var force = (1.0 - mpa) * p.offdiag + mpa * (1.0 - p.offdiag);
  Var w = g.softmax(force / beta, 1);
  return nce_from_denominator(g, p.pos, weighted_denominator(g, p, w, tau, q), tau);
}

Var nce_loss(const PatchSet& ps, const LossConfig& cfg, double mpa, double miou) {
  switch (cfg.nce_variant) {
    case NceVariant::kPatchNce:
      return patch_nce(ps, cfg.tau, cfg.negatives_from_generated);
    case NceVariant::kMonceHard:
      return monce_loss(ps, cfg.tau, cfg.beta, cfg.q, true, cfg.negatives_from_generated);
    case NceVariant::kMonceEasy:
      return monce_loss(ps, cfg.tau, cfg.beta, cfg.q, false,
                        cfg.negatives_from_generated);
    case NceVariant::kSenceMpa:
      return sence_loss(ps, mpa, cfg.tau, cfg.beta, cfg.q, cfg.negatives_from_generated);
    case NceVariant::kSenceMiou:
      return sence_loss(ps, miou, cfg.tau, cfg.beta, cfg.q,
                        cfg.negatives_from_generated);
  }
  throw Error("unknown nce variant");
}

Var composite_objective(Graph& g, const ObjectiveParts& parts, const LossConfig& cfg) {
  cfg.validate();
  RG_CHECK(parts.gan.has_value(), "composite objective is missing the adversarial part");
  RG_CHECK(parts.nce.has_value(), "composite objective is missing the ",
           nce_variant_name(cfg.nce_variant), " part");
  Var total = cfg.lambda_gan * *parts.gan + cfg.lambda_nce * *parts.nce;
  if (cfg.geom_variant != GeomVariant::kNone) {
    RG_CHECK(parts.geom.has_value(), "composite objective is missing the ",
             geom_variant_name(cfg.geom_variant), " part");
    total = total + cfg.lambda_geom * *parts.geom;
  }
  return total;
}

}  // namespace raingen::losses
