#include "raingen/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace raingen::harness {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

class KvReader {
 public:
  explicit KvReader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  std::string str(const std::string& key, const std::string& fallback) {
    seen_.push_back(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  double num(const std::string& key, double fallback) {
    seen_.push_back(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      RG_CHECK(pos == it->second.size(), "trailing characters");
      return v;
    } catch (const std::exception&) {
      throw Error("config key '" + key + "' has a non-numeric value '" + it->second + "'");
    }
  }
  int integer(const std::string& key, int fallback) {
    const double v = num(key, static_cast<double>(fallback));
    RG_CHECK(v == static_cast<int>(v), "config key '", key, "' must be an integer");
    return static_cast<int>(v);
  }
  bool boolean(const std::string& key, bool fallback) {
    const std::string v = str(key, fallback ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("config key '" + key + "' must be true/false, got '" + v + "'");
  }

  void reject_unknown() const {
    for (const auto& [key, value] : kv_)
      RG_CHECK(std::find(seen_.begin(), seen_.end(), key) != seen_.end(),
               "unknown config key '", key, "'");
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::vector<std::string> seen_;
};

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  RG_CHECK(in.good(), "cannot open config file ", path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    RG_CHECK(eq != std::string::npos, "config line ", line_no, " is not 'key = value': ",
             line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    RG_CHECK(!key.empty(), "config line ", line_no, " has an empty key");
    kv[key] = value;
  }
  return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    RG_CHECK(eq != std::string::npos, "--set expects key=value, got '", item, "'");
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
}

void TrainConfig::validate() const {
  loss.validate();
  RG_CHECK(epochs >= 0, "epochs must be non-negative");
  RG_CHECK(lr_phase1 > 0.0 && lr_phase2 > 0.0, "learning rates must be positive");
  RG_CHECK(phase_boundary > 0.0 && phase_boundary < 1.0,
           "phase boundary must be in (0,1), got ", phase_boundary);
  RG_CHECK(lr_schedule == "step" || lr_schedule == "linear",
           "lr_schedule must be step or linear, got ", lr_schedule);
  RG_CHECK(batch >= 1, "batch must be at least 1");
  RG_CHECK(crop >= 16 && crop % 16 == 0,
           "crop must be a positive multiple of 16, got ", crop);
  RG_CHECK(patches >= 2, "patches must be at least 2");
  RG_CHECK(dims.base_channels >= 1 && dims.res_blocks >= 1, "model dims invalid");
  taps.validate(dims);
}

double TrainConfig::learning_rate(int epoch) const {
  const double boundary = phase_boundary * epochs;
  if (static_cast<double>(epoch) < boundary) return lr_phase1;
  if (lr_schedule == "step") return lr_phase2;
  // linear: interpolate from lr_phase1 at the boundary down to lr_phase2 at
  // the final epoch
  const double span = epochs - boundary;
  if (span <= 1.0) return lr_phase2;
  const double t = (static_cast<double>(epoch) - boundary) / (span - 1.0 + 1e-12);
  return lr_phase1 + std::min(1.0, t) * (lr_phase2 - lr_phase1);
}

void apply_variant(TrainConfig& cfg) {
  using losses::GeomVariant;
  using losses::NceVariant;
  struct Row {
    const char* id;
    GeomVariant geom;
    NceVariant nce;
  };
  static const Row rows[] = {
      {"M1", GeomVariant::kNone, NceVariant::kPatchNce},
      {"M2", GeomVariant::kPtl, NceVariant::kPatchNce},
      {"M3", GeomVariant::kTps, NceVariant::kPatchNce},
      {"M4", GeomVariant::kNone, NceVariant::kMonceHard},
      {"M5", GeomVariant::kNone, NceVariant::kSenceMpa},
      {"M6", GeomVariant::kTps, NceVariant::kSenceMiou},
      {"M7", GeomVariant::kTps, NceVariant::kSenceMpa},
  };
  if (cfg.variant == "custom") return;
  for (const Row& row : rows) {
    if (cfg.variant == row.id) {
      cfg.loss.geom_variant = row.geom;
      cfg.loss.nce_variant = row.nce;
      return;
    }
  }
  throw Error("unknown variant id '" + cfg.variant + "' (want M1..M7 or custom)");
}

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
  KvReader r(kv);
  TrainConfig cfg;
  cfg.loss.tau = r.num("tau", cfg.loss.tau);
  cfg.loss.beta = r.num("beta", cfg.loss.beta);
  cfg.loss.q = r.num("q", cfg.loss.q);
  cfg.loss.lambda_gan = r.num("lambda_gan", cfg.loss.lambda_gan);
  cfg.loss.lambda_nce = r.num("lambda_nce", cfg.loss.lambda_nce);
  cfg.loss.lambda_geom = r.num("lambda_geom", cfg.loss.lambda_geom);
  cfg.loss.nce_variant = losses::parse_nce_variant(
      r.str("nce_variant", losses::nce_variant_name(cfg.loss.nce_variant)));
  cfg.loss.geom_variant = losses::parse_geom_variant(
      r.str("geom_variant", losses::geom_variant_name(cfg.loss.geom_variant)));
  cfg.loss.negatives_from_generated =
      r.boolean("negatives_from_generated", cfg.loss.negatives_from_generated);

  cfg.dims.base_channels = r.integer("base_channels", cfg.dims.base_channels);
  cfg.dims.res_blocks = r.integer("res_blocks", cfg.dims.res_blocks);
  cfg.dims.hidden_dim = r.integer("hidden_dim", cfg.dims.hidden_dim);
  cfg.dims.embed_dim = r.integer("embed_dim", cfg.dims.embed_dim);

  cfg.variant = r.str("variant", cfg.variant);
  cfg.epochs = r.integer("epochs", cfg.epochs);
  cfg.lr_phase1 = r.num("lr_phase1", cfg.lr_phase1);
  cfg.lr_phase2 = r.num("lr_phase2", cfg.lr_phase2);
  cfg.phase_boundary = r.num("phase_boundary", cfg.phase_boundary);
  cfg.lr_schedule = r.str("lr_schedule", cfg.lr_schedule);
  cfg.adam_beta1 = r.num("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = r.num("adam_beta2", cfg.adam_beta2);
  cfg.batch = r.integer("batch", cfg.batch);
  cfg.crop = r.integer("crop", cfg.crop);
  cfg.patches = r.integer("patches", cfg.patches);
  cfg.seed = static_cast<uint64_t>(r.num("seed", static_cast<double>(cfg.seed)));
  cfg.manifest = r.str("manifest", cfg.manifest.string());
  cfg.out_dir = r.str("out_dir", cfg.out_dir.string());
  r.reject_unknown();

  apply_variant(cfg);
  cfg.validate();
  return cfg;
}

GenDataConfig gen_config_from_kv(const std::map<std::string, std::string>& kv) {
  KvReader r(kv);
  GenDataConfig cfg;
  synth::BuildConfig& b = cfg.build;
  b.root = r.str("data_root", "data/synth");
  b.train_per_domain = r.integer("train_per_domain", 200);
  b.test_per_domain = r.integer("test_per_domain", 24);
  b.image_size = r.integer("image_size", 64);
  b.seed = static_cast<uint64_t>(r.num("seed", 1.0));
  synth::WeatherRanges& w = b.weather;
  w.streak_count_lo = r.integer("streaks_lo", w.streak_count_lo);
  w.streak_count_hi = r.integer("streaks_hi", w.streak_count_hi);
  w.opacity_lo = r.num("opacity_lo", w.opacity_lo);
  w.opacity_hi = r.num("opacity_hi", w.opacity_hi);
  w.darkening_lo = r.num("darkening_lo", w.darkening_lo);
  w.darkening_hi = r.num("darkening_hi", w.darkening_hi);
  w.reflection_lo = r.num("reflection_lo", w.reflection_lo);
  w.reflection_hi = r.num("reflection_hi", w.reflection_hi);
  w.mist_lo = r.num("mist_lo", w.mist_lo);
  w.mist_hi = r.num("mist_hi", w.mist_hi);
  r.reject_unknown();
  RG_CHECK(b.image_size >= 16 && b.image_size % 16 == 0,
           "image_size must be a positive multiple of 16");
  return cfg;
}

uint64_t config_digest(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "variant=" << cfg.variant
     << ";geom=" << losses::geom_variant_name(cfg.loss.geom_variant)
     << ";nce=" << losses::nce_variant_name(cfg.loss.nce_variant)
     << ";tau=" << cfg.loss.tau << ";beta=" << cfg.loss.beta << ";q=" << cfg.loss.q
     << ";l1=" << cfg.loss.lambda_gan << ";l2=" << cfg.loss.lambda_nce
     << ";l3=" << cfg.loss.lambda_geom << ";bc=" << cfg.dims.base_channels
     << ";rb=" << cfg.dims.res_blocks << ";hd=" << cfg.dims.hidden_dim
     << ";ed=" << cfg.dims.embed_dim;
  const std::string s = os.str();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace raingen::harness
