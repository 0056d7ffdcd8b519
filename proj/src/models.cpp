#include "raingen/models.hpp"

#include <algorithm>
#include <cmath>

namespace raingen::models {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

void EncoderTaps::validate(const ModelDims& dims) const {
  RG_CHECK(!layers.empty(), "encoder taps must not be empty");
  for (int idx : layers)
    RG_CHECK(idx >= 0 && idx < 3 + dims.res_blocks, "encoder tap index ", idx,
             " out of range for ", 3 + dims.res_blocks, " encoder layers");
}

std::vector<int> EncoderTaps::channels(const ModelDims& dims) const {
  std::vector<int> out;
  for (int idx : layers) {
    if (idx == 0) out.push_back(dims.c1());
    else if (idx == 1) out.push_back(dims.c2());
    else out.push_back(dims.c3());
  }
  return out;
}

ad::Tensor& ParamSet::get(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return t;
  throw Error("unknown parameter: " + name);
}

const ad::Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw Error("unknown parameter: " + name);
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : items) n += t.numel();
  return n;
}

namespace {

constexpr double kInitStd = 0.02;

void add_param(ParamSet& ps, std::mt19937_64& rng, const std::string& name, Shape shape,
               bool zero) {
  Tensor t = Tensor::zeros(std::move(shape));
  if (!zero) {
    std::normal_distribution<double> dist(0.0, kInitStd);
    for (double& v : t.values) v = dist(rng);
  }
  t.requires_grad = true;
  ps.items.emplace_back(name, std::move(t));
}

void add_conv(ParamSet& ps, std::mt19937_64& rng, const std::string& stem, int64_t c0,
              int64_t c1, int64_t k) {
  add_param(ps, rng, stem + ".w", {c0, c1, k, k}, false);
  add_param(ps, rng, stem + ".b", {c0 == 0 ? c1 : c0}, true);
}

}  // namespace

Models init_params(uint64_t seed, const ModelDims& dims, const EncoderTaps& taps) {
  taps.validate(dims);
  Models m;
  m.dims = dims;
  m.taps = taps;
  std::mt19937_64 rng(seed);

  ParamSet& g = m.generator;
  add_conv(g, rng, "g.down1", dims.c1(), 3, 4);
  add_conv(g, rng, "g.down2", dims.c2(), dims.c1(), 4);
  add_conv(g, rng, "g.down3", dims.c3(), dims.c2(), 4);
  for (int r = 1; r <= dims.res_blocks; ++r) {
    const std::string stem = "g.res" + std::to_string(r);
    add_conv(g, rng, stem + ".c1", dims.c3(), dims.c3(), 3);
    add_conv(g, rng, stem + ".c2", dims.c3(), dims.c3(), 3);
  }
  // transposed-conv weights are [C_in, C_out, k, k]; bias sized by C_out
  add_param(g, rng, "g.up1.w", {dims.c3(), dims.c2(), 4, 4}, false);
  add_param(g, rng, "g.up1.b", {dims.c2()}, true);
  add_param(g, rng, "g.up2.w", {dims.c2(), dims.c1(), 4, 4}, false);
  add_param(g, rng, "g.up2.b", {dims.c1()}, true);
  // The last decoder layer starts at zero so a fresh generator reduces to
  // the logit skip path: the residual branch dominates only after training.
  add_param(g, rng, "g.up3.w", {dims.c1(), 3, 4, 4}, true);
  add_param(g, rng, "g.up3.b", {3}, true);

  ParamSet& d = m.discriminator;
  add_conv(d, rng, "d.c1", dims.c1(), 3, 4);
  add_conv(d, rng, "d.c2", dims.c2(), dims.c1(), 4);
  add_conv(d, rng, "d.c3", dims.c3(), dims.c2(), 4);
  add_conv(d, rng, "d.c4", 1, dims.c3(), 4);

  const std::vector<int> tap_channels = taps.channels(dims);
  for (size_t t = 0; t < tap_channels.size(); ++t) {
    const std::string stem = "h.t" + std::to_string(t);
    add_param(m.heads, rng, stem + ".w1", {tap_channels[t], dims.hidden_dim}, false);
    add_param(m.heads, rng, stem + ".b1", {dims.hidden_dim}, true);
    add_param(m.heads, rng, stem + ".w2", {dims.hidden_dim, dims.embed_dim}, false);
    add_param(m.heads, rng, stem + ".b2", {dims.embed_dim}, true);
    // A post-relu feature row can be exactly zero; a nonzero first bias
    // keeps such patches embeddable (normalization needs a direction).
    for (double& v : m.heads.get(stem + ".b1").values) v = 0.01;
  }
  return m;
}

BoundParams bind(Graph& g, const ParamSet& ps, bool requires_grad) {
  BoundParams bound;
  bound.ordered.reserve(ps.items.size());
  for (const auto& [name, tensor] : ps.items) {
    Tensor copy = tensor;
    copy.requires_grad = requires_grad;
    copy.grad.clear();
    Var v = g.leaf(std::move(copy));
    bound.ordered.push_back(v);
    bound.by_name.emplace(name, v);
  }
  return bound;
}

ad::Var BoundParams::operator[](const std::string& name) const {
  auto it = by_name.find(name);
  RG_CHECK(it != by_name.end(), "unbound parameter: ", name);
  return it->second;
}

namespace {

Var conv_in_relu(Graph& g, const BoundParams& p, const std::string& stem, Var x,
                 int stride, int pad) {
  Var y = g.conv2d(x, p[stem + ".w"], p[stem + ".b"], stride, pad);
  return g.relu(g.instance_norm(y));
}

Var res_block(Graph& g, const BoundParams& p, const std::string& stem, Var x) {
  Var y = g.relu(g.instance_norm(g.conv2d(x, p[stem + ".c1.w"], p[stem + ".c1.b"], 1, 1)));
  y = g.instance_norm(g.conv2d(y, p[stem + ".c2.w"], p[stem + ".c2.b"], 1, 1));
  return g.add(x, y);
}

// Encoder layers in tap order: down1, down2, down3, res1..resR. Runs only
// as deep as the last requested tap when `full_depth` is false.
std::vector<Var> run_encoder(Graph& g, const BoundParams& p, Var nchw,
                             const ModelDims& dims, const EncoderTaps& taps,
                             bool full_depth, Var* trunk_out) {
  const int last_tap = *std::max_element(taps.layers.begin(), taps.layers.end());
  const int depth = full_depth ? 3 + dims.res_blocks : last_tap + 1;
  std::vector<Var> layer_outs;
  Var x = nchw;
  for (int layer = 0; layer < depth; ++layer) {
    if (layer == 0) x = conv_in_relu(g, p, "g.down1", x, 2, 1);
    else if (layer == 1) x = conv_in_relu(g, p, "g.down2", x, 2, 1);
    else if (layer == 2) x = conv_in_relu(g, p, "g.down3", x, 2, 1);
    else x = res_block(g, p, "g.res" + std::to_string(layer - 2), x);
    layer_outs.push_back(x);
  }
  if (trunk_out) *trunk_out = x;
  std::vector<Var> tapped;
  for (int idx : taps.layers) tapped.push_back(layer_outs[static_cast<size_t>(idx)]);
  return tapped;
}

Tensor input_logits(const Tensor& image) {
  // atanh of the [-1,1]-scaled image, clamped away from the poles; feeding
  // this back through the output tanh makes an untrained generator pass
  // the image through nearly unchanged.
  Tensor u = image;
  constexpr double kLimit = 1.0 - 1e-3;
  for (double& v : u.values) {
    double c = 2.0 * v - 1.0;
    c = std::min(kLimit, std::max(-kLimit, c));
    v = std::atanh(c);
  }
  return u;
}

void check_generator_input(const Tensor& t) {
  RG_CHECK(t.rank() == 3 && t.shape[0] == 3, "generator expects a [3,H,W] image, got ",
           ad::shape_str(t.shape));
  RG_CHECK(t.shape[1] % 8 == 0 && t.shape[2] % 8 == 0,
           "generator spatial size must be a multiple of 8, got ", t.shape[1], "x",
           t.shape[2]);
}

}  // namespace

GeneratorForward generator_forward(Graph& g, const BoundParams& p, Var image,
                                   const ModelDims& dims, const EncoderTaps& taps) {
  check_generator_input(image.tensor());
  Var skip = g.constant(input_logits(image.tensor()));
  const int64_t h = image.shape()[1], w = image.shape()[2];
  Var nchw = g.reshape(image, {1, 3, h, w});

  Var trunk;
  GeneratorForward out;
  out.taps = run_encoder(g, p, nchw, dims, taps, true, &trunk);

  Var y = trunk;
  y = g.relu(g.instance_norm(g.conv2d_transpose(y, p["g.up1.w"], p["g.up1.b"], 2, 1)));
  y = g.relu(g.instance_norm(g.conv2d_transpose(y, p["g.up2.w"], p["g.up2.b"], 2, 1)));
  y = g.conv2d_transpose(y, p["g.up3.w"], p["g.up3.b"], 2, 1);

  Var pre = g.add(g.reshape(y, {3, h, w}), skip);
  out.output = 0.5 * (g.tanh(pre) + 1.0);
  return out;
}

std::vector<Var> encoder_taps(Graph& g, const BoundParams& p, Var image,
                              const ModelDims& dims, const EncoderTaps& taps) {
  check_generator_input(image.tensor());
  const int64_t h = image.shape()[1], w = image.shape()[2];
  Var nchw = g.reshape(image, {1, 3, h, w});
  return run_encoder(g, p, nchw, dims, taps, false, nullptr);
}

ad::Var discriminator_forward(Graph& g, const BoundParams& p, Var image,
                              const ModelDims& dims) {
  const Tensor& t = image.tensor();
  RG_CHECK(t.rank() == 3 && t.shape[0] == 3,
           "discriminator expects a [3,H,W] image, got ", ad::shape_str(t.shape));
  RG_CHECK(t.shape[1] % 16 == 0 && t.shape[2] % 16 == 0,
           "discriminator spatial size must be a multiple of 16, got ", t.shape[1], "x",
           t.shape[2]);
  const int64_t h = t.shape[1], w = t.shape[2];
  Var x = g.reshape(image, {1, 3, h, w});
  x = g.leaky_relu(g.conv2d(x, p["d.c1.w"], p["d.c1.b"], 2, 1), 0.2);
  x = g.leaky_relu(g.instance_norm(g.conv2d(x, p["d.c2.w"], p["d.c2.b"], 2, 1)), 0.2);
  x = g.leaky_relu(g.instance_norm(g.conv2d(x, p["d.c3.w"], p["d.c3.b"], 2, 1)), 0.2);
  x = g.sigmoid(g.conv2d(x, p["d.c4.w"], p["d.c4.b"], 2, 1));
  return g.reshape(x, {h / 16, w / 16});
}

SampledPatches sample_patches(Graph& g, const BoundParams& heads,
                              const std::vector<Var>& features_x,
                              const std::vector<Var>& features_z, int n,
                              std::mt19937_64& rng, const ModelDims& dims,
                              bool clamp_to_available) {
  RG_CHECK(features_x.size() == features_z.size(),
           "feature stacks differ in tap count");
  RG_CHECK(n >= 1, "sample_patches: n must be at least 1, got ", n);

  SampledPatches out;
  for (size_t tap = 0; tap < features_x.size(); ++tap) {
    const Tensor& fx = features_x[tap].tensor();
    const Tensor& fz = features_z[tap].tensor();
    RG_CHECK(fx.shape == fz.shape, "tap ", tap, " feature shapes differ: ",
             ad::shape_str(fx.shape), " vs ", ad::shape_str(fz.shape));
    RG_CHECK(fx.rank() == 4 && fx.shape[0] == 1, "tap features must be [1,C,h,w]");
    const int64_t c = fx.shape[1];
    const int64_t locations = fx.shape[2] * fx.shape[3];
    RG_CHECK(clamp_to_available || n <= locations, "sample_patches: n = ", n,
             " exceeds the ", locations, " available locations at tap ", tap);
    const int n_tap = static_cast<int>(std::min<int64_t>(n, locations));

    // Seeded partial Fisher-Yates draw without replacement; the same
    // locations index both feature stacks so row i stays spatially aligned.
    std::vector<int64_t> all(static_cast<size_t>(locations));
    for (int64_t i = 0; i < locations; ++i) all[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n_tap; ++i) {
      std::uniform_int_distribution<int64_t> pick(i, locations - 1);
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(pick(rng))]);
    }

    // Flat indices laid out so the gathered vector reshapes to [n, C].
    std::vector<int64_t> idx(static_cast<size_t>(n_tap) * c);
    for (int i = 0; i < n_tap; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        idx[static_cast<size_t>(i) * c + ch] = ch * locations + all[static_cast<size_t>(i)];

    const std::string stem = "h.t" + std::to_string(tap);
    auto project = [&](Var feats) {
      Var rows = g.reshape(g.gather(feats, idx), {n_tap, c});
      // leaky activation: a relu here maps whole orthants to an exactly
      // zero row, which has no direction to normalize
      Var hidden = g.leaky_relu(
          g.add(g.matmul(rows, heads[stem + ".w1"]), heads[stem + ".b1"]), 0.2);
      Var embed = g.add(g.matmul(hidden, heads[stem + ".w2"]), heads[stem + ".b2"]);
      return g.l2_normalize(embed, 1);
    };
    out.sets.push_back({project(features_z[tap]), project(features_x[tap])});
    out.locations.emplace_back(all.begin(), all.begin() + n_tap);
  }
  (void)dims;
  return out;
}

}  // namespace raingen::models
