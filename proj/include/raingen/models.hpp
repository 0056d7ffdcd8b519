#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "raingen/graph.hpp"
#include "raingen/losses.hpp"

namespace raingen::models {

struct ModelDims {
  int base_channels = 32;  // encoder widths: 3 -> c -> 2c -> 4c
  int res_blocks = 4;
  int hidden_dim = 64;  // projection head hidden width
  int embed_dim = 64;   // projection head output width

  int c1() const { return base_channels; }
  int c2() const { return 2 * base_channels; }
  int c3() const { return 4 * base_channels; }
};

// Indices into the ordered encoder layer list
// [down1, down2, down3, res1, .., resR]. Default taps: after each
// downsampling stage and after residual block 2.
struct EncoderTaps {
  std::vector<int> layers = {0, 1, 2, 4};

  void validate(const ModelDims& dims) const;
  // Channel width of the feature map at each tap.
  std::vector<int> channels(const ModelDims& dims) const;
};

// Ordered named parameter tensors; the order fixes the optimizer state,
// checkpoint layout and init stream.
struct ParamSet {
  std::vector<std::pair<std::string, ad::Tensor>> items;

  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;
  int64_t total_size() const;
};

struct Models {
  ModelDims dims;
  EncoderTaps taps;
  ParamSet generator;
  ParamSet discriminator;
  ParamSet heads;
};

// Convolution weights drawn from N(0, 0.02^2), biases zero, in a fixed
// order from the given seed.
Models init_params(uint64_t seed, const ModelDims& dims = {},
                   const EncoderTaps& taps = {});

// Per-graph leaves for one parameter set, in item order.
struct BoundParams {
  std::vector<ad::Var> ordered;
  std::map<std::string, ad::Var> by_name;

  ad::Var operator[](const std::string& name) const;
};

BoundParams bind(ad::Graph& g, const ParamSet& ps, bool requires_grad);

struct GeneratorForward {
  ad::Var output;             // [3,H,W] in [0,1]
  std::vector<ad::Var> taps;  // [1,C,h,w] feature maps at the tap layers
};

// Translator network: strided conv encoder, residual trunk, transposed-conv
// decoder, then a tanh squashed to [0,1] around the input's logit so a
// fresh init is close to the identity (the residual path dominates).
GeneratorForward generator_forward(ad::Graph& g, const BoundParams& p, ad::Var image,
                                   const ModelDims& dims, const EncoderTaps& taps);

// Encoder-only pass used to embed the generated image for contrastive
// sampling.
std::vector<ad::Var> encoder_taps(ad::Graph& g, const BoundParams& p, ad::Var image,
                                  const ModelDims& dims, const EncoderTaps& taps);

// 4-layer strided patch classifier; returns the [H/16, W/16] probability map.
ad::Var discriminator_forward(ad::Graph& g, const BoundParams& p, ad::Var image,
                              const ModelDims& dims);

struct SampledPatches {
  std::vector<losses::PatchSet> sets;              // one per tap
  std::vector<std::vector<int64_t>> locations;     // drawn flat indices per tap
};

// Draws n spatial locations per tap without replacement (seeded), indexes
// both feature stacks at the same locations, and projects them through the
// tap's head. anchors come from features_z, positives from features_x.
// Asking for more locations than a tap holds is an error unless
// clamp_to_available is set, in which case that tap uses all of its
// locations (the training loop does this: deep taps of small crops hold
// fewer than the configured patch count).
SampledPatches sample_patches(ad::Graph& g, const BoundParams& heads,
                              const std::vector<ad::Var>& features_x,
                              const std::vector<ad::Var>& features_z, int n,
                              std::mt19937_64& rng, const ModelDims& dims,
                              bool clamp_to_available = false);

}  // namespace raingen::models
