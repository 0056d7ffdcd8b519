#include "raingen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "json.hpp"
#include "raingen/image.hpp"
#include "raingen/synthdata.hpp"

namespace raingen::harness {

namespace fs = std::filesystem;
using ad::Graph;
using ad::Tensor;
using ad::Var;

void Adam::step(models::ParamSet& params, const std::vector<std::vector<double>>& grads,
                double lr) {
  RG_CHECK(grads.size() == params.items.size(), "optimizer got ", grads.size(),
           " gradients for ", params.items.size(), " parameters");
  if (m_.empty()) {
    m_.resize(params.items.size());
    v_.resize(params.items.size());
    for (size_t i = 0; i < params.items.size(); ++i) {
      m_[i].assign(params.items[i].second.values.size(), 0.0);
      v_[i].assign(params.items[i].second.values.size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.items.size(); ++i) {
    std::vector<double>& w = params.items[i].second.values;
    RG_CHECK(grads[i].size() == w.size(), "gradient size mismatch for ",
             params.items[i].first);
    for (size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

struct DomainData {
  std::vector<Image> images;
  std::vector<semantic::SegMap> segmaps;
};

DomainData load_split(const synth::DatasetManifest& manifest, const std::string& split) {
  DomainData data;
  for (const synth::ManifestEntry* e : manifest.split(split)) {
    data.images.push_back(read_image(manifest.root / e->image));
    data.segmaps.push_back(
        semantic::load_segmap(manifest.root / e->segmap, synth::kNumClasses));
  }
  return data;
}

Image crop_or_full(const Image& img, int crop_size, std::mt19937_64& rng) {
  RG_CHECK(img.height >= crop_size && img.width >= crop_size, "crop ", crop_size,
           " exceeds image size ", img.height, "x", img.width);
  if (img.height == crop_size && img.width == crop_size) return img;
  std::uniform_int_distribution<int> dy(0, img.height - crop_size);
  std::uniform_int_distribution<int> dx(0, img.width - crop_size);
  const int y0 = dy(rng), x0 = dx(rng);
  return crop(img, y0, x0, crop_size, crop_size);
}

template <class F>
Var build_term(const char* name, F&& f) {
  try {
    Var v = f();
    RG_CHECK(std::isfinite(v.scalar()), "non-finite value");
    return v;
  } catch (const Error& e) {
    throw Error(detail::format_msg("failed building the ", name, " term: ", e.what()));
  }
}

void accumulate(std::vector<std::vector<double>>& acc,
                const std::vector<std::vector<double>>& grads) {
  if (acc.empty()) {
    acc = grads;
    return;
  }
  for (size_t i = 0; i < grads.size(); ++i)
    for (size_t j = 0; j < grads[i].size(); ++j) acc[i][j] += grads[i][j];
}

void scale(std::vector<std::vector<double>>& grads, double factor) {
  for (auto& g : grads)
    for (double& v : g) v *= factor;
}

losses::DiscriminatorMap to_dmap(const Var& v) {
  const Tensor& t = v.tensor();
  return losses::DiscriminatorMap(static_cast<int>(t.shape[0]),
                                  static_cast<int>(t.shape[1]), t.values);
}

nlohmann::json log_to_json(const EpochLog& log) {
  return nlohmann::json{
      {"epoch", log.epoch},
      {"lr", log.lr},
      {"loss_d", log.loss_d},
      {"loss_gan", log.loss_gan},
      {"loss_nce", log.loss_nce},
      {"loss_geom", log.loss_geom},
      {"loss_total", log.loss_total},
      {"point_to_segment", log.point_to_segment},
  };
}

}  // namespace

std::vector<EpochLog> load_train_log(const fs::path& path) {
  std::ifstream in(path);
  RG_CHECK(in.good(), "cannot open train log ", path.string());
  std::vector<EpochLog> logs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    EpochLog log;
    log.epoch = j.at("epoch").get<int>();
    log.lr = j.at("lr").get<double>();
    log.loss_d = j.at("loss_d").get<double>();
    log.loss_gan = j.at("loss_gan").get<double>();
    log.loss_nce = j.at("loss_nce").get<double>();
    log.loss_geom = j.at("loss_geom").get<double>();
    log.loss_total = j.at("loss_total").get<double>();
    log.point_to_segment = j.at("point_to_segment").get<double>();
    logs.push_back(log);
  }
  return logs;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  RG_CHECK(!cfg.manifest.empty(), "train needs a dataset manifest");
  const synth::DatasetManifest manifest = synth::load_manifest(cfg.manifest);
  DomainData a = load_split(manifest, "trainA");
  DomainData b = load_split(manifest, "trainB");
  RG_CHECK(!a.images.empty() && !b.images.empty(),
           "manifest has empty trainA or trainB split");

  const bool wants_sence = cfg.loss.nce_variant == losses::NceVariant::kSenceMpa ||
                           cfg.loss.nce_variant == losses::NceVariant::kSenceMiou;
  if (wants_sence) {
    RG_CHECK(a.segmaps.size() == a.images.size() && b.segmaps.size() == b.images.size(),
             "SeNCE variants need a segmap for every training image");
  }
  semantic::ScoreCache score_cache(&a.segmaps, &b.segmaps);

  TrainResult result;
  result.models = models::init_params(cfg.seed, cfg.dims, cfg.taps);
  Adam adam_g(cfg.adam_beta1, cfg.adam_beta2);
  Adam adam_h(cfg.adam_beta1, cfg.adam_beta2);
  Adam adam_d(cfg.adam_beta1, cfg.adam_beta2);

  std::mt19937_64 data_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 patch_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  RG_CHECK(!ec, "cannot create output directory ", cfg.out_dir.string());
  result.log_path = cfg.out_dir / "train_log.jsonl";
  std::ofstream log_out(result.log_path);
  RG_CHECK(log_out.good(), "cannot write train log ", result.log_path.string());

  struct SampleCtx {
    std::unique_ptr<Graph> graph;
    models::BoundParams gp, hp;
    Var x, y, z;
    std::vector<Var> taps_x;
    size_t a_idx = 0, b_idx = 0;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    std::vector<size_t> order(a.images.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), data_rng);

    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    int samples_seen = 0;

    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch)) {
      const size_t batch_end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch));
      const int batch_n = static_cast<int>(batch_end - pos);

      std::vector<SampleCtx> ctx(static_cast<size_t>(batch_n));
      std::vector<std::vector<double>> d_grads;

      // discriminator phase: fresh generator forward, detached fake
      for (int s = 0; s < batch_n; ++s) {
        SampleCtx& c = ctx[static_cast<size_t>(s)];
        c.graph = std::make_unique<Graph>();
        Graph& g = *c.graph;
        c.a_idx = order[pos + static_cast<size_t>(s)];
        std::uniform_int_distribution<size_t> pick_b(0, b.images.size() - 1);
        c.b_idx = pick_b(data_rng);

        c.gp = models::bind(g, result.models.generator, true);
        c.hp = models::bind(g, result.models.heads, true);
        auto dp = models::bind(g, result.models.discriminator, true);

        c.x = g.leaf(image_to_tensor(crop_or_full(a.images[c.a_idx], cfg.crop, data_rng)));
        c.y = g.leaf(image_to_tensor(crop_or_full(b.images[c.b_idx], cfg.crop, data_rng)));
        auto fwd = models::generator_forward(g, c.gp, c.x, cfg.dims, cfg.taps);
        c.z = fwd.output;
        c.taps_x = fwd.taps;

        Var loss_d = build_term("discriminator", [&] {
          Var zd = g.detach(c.z);
          Var d_real = models::discriminator_forward(g, dp, c.y, cfg.dims);
          Var d_fake = models::discriminator_forward(g, dp, zd, cfg.dims);
          return losses::gan_losses(d_real, d_fake).d_loss;
        });
        log.loss_d += loss_d.scalar();
        accumulate(d_grads, g.gradients(loss_d, dp.ordered));
      }
      scale(d_grads, 1.0 / batch_n);
      adam_d.step(result.models.discriminator, d_grads, lr);

      // generator phase: same tapes, updated discriminator as fresh leaves
      std::vector<std::vector<double>> g_grads, h_grads;
      for (int s = 0; s < batch_n; ++s) {
        SampleCtx& c = ctx[static_cast<size_t>(s)];
        Graph& g = *c.graph;
        auto dp = models::bind(g, result.models.discriminator, false);

        Var dxm = g.detach(models::discriminator_forward(g, dp, c.x, cfg.dims));
        Var dym = g.detach(models::discriminator_forward(g, dp, c.y, cfg.dims));
        Var dzm = models::discriminator_forward(g, dp, c.z, cfg.dims);

        losses::ObjectiveParts parts;
        parts.gan = build_term("adversarial", [&] {
          return losses::gan_losses(dym, dzm).g_loss;
        });

        semantic::SemanticScore score{0.0, 0.0};
        if (wants_sence) score = score_cache.get(c.a_idx, c.b_idx);
        parts.nce = build_term(losses::nce_variant_name(cfg.loss.nce_variant), [&] {
          auto feats_z = models::encoder_taps(g, c.gp, c.z, cfg.dims, cfg.taps);
          auto sampled = models::sample_patches(g, c.hp, c.taps_x, feats_z, cfg.patches,
                                                patch_rng, cfg.dims, true);
          // per-patch normalization keeps the contrastive term on the same
          // scale as the adversarial one under the default unit weights,
          // independent of the configured patch count
          auto per_patch = [&](const losses::PatchSet& ps) {
            return losses::nce_loss(ps, cfg.loss, score.mpa, score.miou) /
                   static_cast<double>(ps.n());
          };
          Var acc = per_patch(sampled.sets[0]);
          for (size_t t = 1; t < sampled.sets.size(); ++t)
            acc = acc + per_patch(sampled.sets[t]);
          return acc / static_cast<double>(sampled.sets.size());
        });

        if (cfg.loss.geom_variant != losses::GeomVariant::kNone) {
          parts.geom = build_term(losses::geom_variant_name(cfg.loss.geom_variant), [&] {
            return cfg.loss.geom_variant == losses::GeomVariant::kTps
                       ? losses::tps_loss(dxm, dym, dzm)
                       : losses::ptl_loss(dxm, dym, dzm);
          });
        }

        Var total = build_term("composite objective", [&] {
          return losses::composite_objective(g, parts, cfg.loss);
        });

        log.loss_gan += parts.gan->scalar();
        log.loss_nce += parts.nce->scalar();
        log.loss_geom += parts.geom ? parts.geom->scalar() : 0.0;
        log.loss_total += total.scalar();
        log.point_to_segment +=
            metrics::point_to_segment(to_dmap(dxm), to_dmap(dym), to_dmap(dzm));

        std::vector<Var> wrt = c.gp.ordered;
        wrt.insert(wrt.end(), c.hp.ordered.begin(), c.hp.ordered.end());
        auto grads = g.gradients(total, wrt);
        std::vector<std::vector<double>> gg(grads.begin(),
                                            grads.begin() + static_cast<int64_t>(c.gp.ordered.size()));
        std::vector<std::vector<double>> hh(grads.begin() + static_cast<int64_t>(c.gp.ordered.size()),
                                            grads.end());
        accumulate(g_grads, gg);
        accumulate(h_grads, hh);
        ++samples_seen;
      }
      scale(g_grads, 1.0 / batch_n);
      scale(h_grads, 1.0 / batch_n);
      adam_g.step(result.models.generator, g_grads, lr);
      adam_h.step(result.models.heads, h_grads, lr);
    }

    const double inv = 1.0 / static_cast<double>(samples_seen);
    log.loss_d *= inv;
    log.loss_gan *= inv;
    log.loss_nce *= inv;
    log.loss_geom *= inv;
    log.loss_total *= inv;
    log.point_to_segment *= inv;
    for (double v : {log.loss_d, log.loss_gan, log.loss_nce, log.loss_geom,
                     log.loss_total, log.point_to_segment})
      RG_CHECK(std::isfinite(v), "non-finite logged term at epoch ", log.epoch);
    result.logs.push_back(log);
    log_out << log_to_json(log).dump() << "\n";
    log_out.flush();
  }

  result.checkpoint_path = cfg.out_dir / "checkpoint.tpsn";
  save_checkpoint(result.checkpoint_path, result.models, config_digest(cfg));
  return result;
}

namespace {

Image run_generator(const models::Models& m, const Image& input) {
  const int h8 = (input.height + 7) / 8 * 8;
  const int w8 = (input.width + 7) / 8 * 8;
  const Image padded = pad_to(input, h8, w8);
  Graph g;
  auto gp = models::bind(g, m.generator, false);
  Var x = g.leaf(image_to_tensor(padded));
  auto fwd = models::generator_forward(g, gp, x, m.dims, m.taps);
  Image out = tensor_to_image(fwd.output.tensor());
  if (out.height != input.height || out.width != input.width)
    out = crop(out, 0, 0, input.height, input.width);
  return out;
}

losses::DiscriminatorMap run_discriminator(const models::Models& m, const Image& input) {
  const int h16 = (input.height + 15) / 16 * 16;
  const int w16 = (input.width + 15) / 16 * 16;
  const Image padded = pad_to(input, h16, w16);
  Graph g;
  auto dp = models::bind(g, m.discriminator, false);
  Var x = g.leaf(image_to_tensor(padded));
  Var map = models::discriminator_forward(g, dp, x, m.dims);
  const Tensor& t = map.tensor();
  return losses::DiscriminatorMap(static_cast<int>(t.shape[0]),
                                  static_cast<int>(t.shape[1]), t.values);
}

}  // namespace

void translate(const TrainConfig& cfg, const fs::path& checkpoint_path,
               const fs::path& input_folder, const fs::path& output_folder) {
  LoadedCheckpoint lc =
      load_checkpoint(checkpoint_path, cfg.dims, cfg.taps, config_digest(cfg));
  auto items = synth::load_image_folder(input_folder, false);
  std::error_code ec;
  fs::create_directories(output_folder, ec);
  RG_CHECK(!ec, "cannot create output directory ", output_folder.string());
  for (const synth::DomainItem& item : items) {
    const Image out = run_generator(lc.models, item.image);
    write_image(output_folder / item.image_path.filename(), out);
  }
}

metrics::DomainReport evaluate(const TrainConfig& cfg, const fs::path& checkpoint_path,
                               const fs::path& report_path) {
  RG_CHECK(!cfg.manifest.empty(), "evaluate needs a dataset manifest");
  LoadedCheckpoint lc =
      load_checkpoint(checkpoint_path, cfg.dims, cfg.taps, config_digest(cfg));
  const synth::DatasetManifest manifest = synth::load_manifest(cfg.manifest);
  DomainData test_a = load_split(manifest, "testA");
  DomainData test_b = load_split(manifest, "testB");
  RG_CHECK(!test_a.images.empty() && !test_b.images.empty(),
           "manifest has empty testA or testB split");

  std::vector<metrics::FeatureVec> clear_f, rainy_f, gen_f;
  std::vector<Image> generated;
  for (const Image& img : test_a.images) {
    clear_f.push_back(metrics::featurize(img));
    generated.push_back(run_generator(lc.models, img));
    gen_f.push_back(metrics::featurize(generated.back()));
  }
  for (const Image& img : test_b.images) rainy_f.push_back(metrics::featurize(img));

  std::mt19937_64 pair_rng(cfg.seed ^ 0x94d049bb133111ebull);
  std::vector<metrics::DmapTriple> triples;
  for (size_t i = 0; i < test_a.images.size(); ++i) {
    std::uniform_int_distribution<size_t> pick_b(0, test_b.images.size() - 1);
    const size_t j = pick_b(pair_rng);
    triples.push_back({run_discriminator(lc.models, test_a.images[i]),
                       run_discriminator(lc.models, test_b.images[j]),
                       run_discriminator(lc.models, generated[i])});
  }

  metrics::DomainReport report = metrics::domain_report(clear_f, rainy_f, gen_f, triples);
  if (!report_path.parent_path().empty())
    fs::create_directories(report_path.parent_path());
  metrics::save_report(report_path, report);
  return report;
}

std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<std::string>& variants,
                                const fs::path& table_path) {
  RG_CHECK(!variants.empty(), "ablate needs at least one variant id");
  std::vector<AblationRow> rows;
  for (const std::string& id : variants) {
    TrainConfig cfg = base;
    cfg.variant = id;
    apply_variant(cfg);  // rejects unknown ids
    cfg.out_dir = base.out_dir / id;
    TrainResult result = train(cfg);
    metrics::DomainReport report =
        evaluate(cfg, result.checkpoint_path, cfg.out_dir / "report.jsonl");
    AblationRow row;
    row.variant = id;
    row.geom_variant = losses::geom_variant_name(cfg.loss.geom_variant);
    row.nce_variant = losses::nce_variant_name(cfg.loss.nce_variant);
    row.report = report;
    row.final_loss_geom = result.logs.empty() ? 0.0 : result.logs.back().loss_geom;
    row.run_dir = cfg.out_dir;
    rows.push_back(std::move(row));
  }

  std::ofstream out(table_path);
  RG_CHECK(out.good(), "cannot write ablation table ", table_path.string());
  out << "variant\tgeom_variant\tnce_variant\tmmd2_gen_rainy\ted_gen_rainy"
         "\tmmd2_clear_rainy\ted_clear_rainy\tmean_segment_distance\tfinal_loss_geom\n";
  out.precision(12);
  for (const AblationRow& r : rows) {
    out << r.variant << "\t" << r.geom_variant << "\t" << r.nce_variant << "\t"
        << r.report.mmd2_gen_rainy << "\t" << r.report.ed_gen_rainy << "\t"
        << r.report.mmd2_clear_rainy << "\t" << r.report.ed_clear_rainy << "\t"
        << r.report.mean_segment_distance << "\t" << r.final_loss_geom << "\n";
  }
  RG_CHECK(out.good(), "failed writing ablation table ", table_path.string());
  return rows;
}

}  // namespace raingen::harness
