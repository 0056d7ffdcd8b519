#pragma once

#include <optional>
#include <string>
#include <vector>

#include "raingen/graph.hpp"

namespace raingen::losses {

// H x W probability matrix produced by the patch discriminator. Entries are
// post-sigmoid, so strictly inside (0,1).
struct DiscriminatorMap {
  int height = 0;
  int width = 0;
  std::vector<double> p;

  DiscriminatorMap() = default;
  DiscriminatorMap(int h, int w, std::vector<double> values);

  int64_t numel() const { return static_cast<int64_t>(p.size()); }
};

enum class NceVariant { kPatchNce, kMonceHard, kMonceEasy, kSenceMpa, kSenceMiou };
enum class GeomVariant { kNone, kPtl, kTps };

const char* nce_variant_name(NceVariant v);
const char* geom_variant_name(GeomVariant v);
NceVariant parse_nce_variant(const std::string& name);
GeomVariant parse_geom_variant(const std::string& name);

struct LossConfig {
  double tau = 0.07;
  double beta = 1.0;
  double q = 1.0;
  double lambda_gan = 1.0;   // weight on the adversarial term
  double lambda_nce = 1.0;   // weight on the contrastive term
  double lambda_geom = 0.1;  // weight on the geometric term
  NceVariant nce_variant = NceVariant::kSenceMpa;
  GeomVariant geom_variant = GeomVariant::kTps;
  // Similarity-matrix orientation: false pairs generated-image anchors with
  // clear-image negatives; true flips to clear anchors / generated negatives.
  bool negatives_from_generated = false;

  void validate() const;
};

// Aligned [N,d] embedding matrices: anchors from the generated image,
// positives from the clear image, row i sharing a spatial location.
struct PatchSet {
  ad::Var anchors;
  ad::Var positives;

  int64_t n() const { return anchors.shape()[0]; }
  int64_t dim() const { return anchors.shape()[1]; }
};

// Enforces n >= 2, matching dims and unit row norms within 1e-6.
void validate_patch_set(const PatchSet& ps);

ad::Var dmap_leaf(ad::Graph& g, const DiscriminatorMap& m, bool requires_grad = false);

// Triangle-inequality slack between D(X), D(Y), D(Z), averaged over the map.
// Zero exactly when every dz entry lies between the corresponding dx and dy.
ad::Var tps_loss(ad::Var dx, ad::Var dy, ad::Var dz);

// Distance from flattened dz to the infinite line through dx and dy,
// normalized by sqrt(HW) so its magnitude is comparable to tps_loss.
ad::Var ptl_loss(ad::Var dx, ad::Var dy, ad::Var dz);

struct GanLossPair {
  ad::Var d_loss;
  ad::Var g_loss;
};

// Binary cross-entropy adversarial pair. Probabilities are clamped to
// [1e-7, 1-1e-7] before the logs. The generator-side loss involves d_fake
// only, so generator gradients flow only through it.
GanLossPair gan_losses(ad::Var d_real, ad::Var d_fake);

// [N,N] similarity matrix whose diagonal holds the positive pairs.
ad::Var similarity_matrix(const PatchSet& ps, bool negatives_from_generated = false);

ad::Var patch_nce(const PatchSet& ps, double tau, bool negatives_from_generated = false);

// Per-anchor softmax over the N-1 negatives of s/beta (hard) or (1-s)/beta
// (easy); rows are positive and sum to 1.
ad::Var monce_weights(ad::Var sims, bool hard, double beta);

ad::Var monce_loss(const PatchSet& ps, double tau, double beta, double q, bool hard,
                   bool negatives_from_generated = false);

// Semantic contrastive force: interpolates the hard and easy regimes by the
// semantic similarity of the clear/rainy pair.
double sence_force(double sim, double mpa);

ad::Var sence_loss(const PatchSet& ps, double mpa, double tau, double beta, double q,
                   bool negatives_from_generated = false);

// Dispatches on cfg.nce_variant; mpa/miou come from the sampled pair's
// cached score and enter as non-differentiated constants.
ad::Var nce_loss(const PatchSet& ps, const LossConfig& cfg, double mpa, double miou);

struct ObjectiveParts {
  std::optional<ad::Var> gan;
  std::optional<ad::Var> nce;
  std::optional<ad::Var> geom;
};

// lambda_gan * L_GAN + lambda_nce * L_NCE + lambda_geom * L_geom, with the
// geometric term absent when geom_variant is none.
ad::Var composite_objective(ad::Graph& g, const ObjectiveParts& parts,
                            const LossConfig& cfg);

// Flat-index helpers for the [N,N] similarity matrix.
std::vector<int64_t> diag_indices(int64_t n);
std::vector<int64_t> offdiag_indices(int64_t n);

}  // namespace raingen::losses
