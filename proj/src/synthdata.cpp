#include "raingen/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace raingen::synth {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  RG_CHECK(size > 0, "scene size must be positive");
  RG_CHECK(horizon > 0.0 && horizon < 1.0, "horizon fraction must be in (0,1), got ",
           horizon);
  for (const SceneObject& o : objects) {
    RG_CHECK(o.cls >= 0 && o.cls < kNumClasses, "object class ", o.cls, " out of range");
    if (o.kind == SceneObject::Kind::kRect) {
      RG_CHECK(o.x >= 0 && o.y >= 0 && o.w > 0 && o.h > 0 && o.x + o.w <= size &&
                   o.y + o.h <= size,
               "rect object out of canvas");
    } else {
      RG_CHECK(o.w > 0 && o.x - o.w >= 0 && o.x + o.w < size && o.y - o.w >= 0 &&
                   o.y + o.w < size,
               "circle object out of canvas");
    }
  }
}

SceneSpec random_scene(uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneSpec spec;
  spec.seed = seed;
  spec.size = size;
  spec.horizon = 0.35 + 0.2 * unit(rng);
  auto jitter = [&](std::array<double, 3> base, double amount) {
    for (double& c : base) c = std::clamp(c + amount * (unit(rng) - 0.5), 0.05, 0.95);
    return base;
  };
  spec.sky_color = jitter({0.62, 0.70, 0.82}, 0.25);
  spec.road_color = jitter({0.30, 0.30, 0.33}, 0.12);

  const int horizon_px = static_cast<int>(std::lround(spec.horizon * size));
  std::uniform_int_distribution<int> n_vehicles(2, 4);
  std::uniform_int_distribution<int> n_lights(1, 3);

  const int vehicles = n_vehicles(rng);
  for (int i = 0; i < vehicles; ++i) {
    SceneObject o;
    o.kind = SceneObject::Kind::kRect;
    o.cls = 2;
    o.w = size / 8 + static_cast<int>(unit(rng) * size / 6);
    o.h = size / 10 + static_cast<int>(unit(rng) * size / 8);
    o.x = static_cast<int>(unit(rng) * (size - o.w));
    const int lo = horizon_px;
    const int hi = std::max(lo + 1, size - o.h);
    o.y = lo + static_cast<int>(unit(rng) * (hi - lo));
    o.y = std::min(o.y, size - o.h);
    o.color = jitter({0.45, 0.25, 0.2}, 0.6);
    spec.objects.push_back(o);
  }
  const int lights = n_lights(rng);
  for (int i = 0; i < lights; ++i) {
    SceneObject o;
    o.kind = SceneObject::Kind::kCircle;
    o.cls = 3;
    o.w = std::max(2, size / 24);
    o.x = o.w + static_cast<int>(unit(rng) * (size - 2 * o.w - 1));
    const int span = std::max(1, horizon_px - 2 * o.w - 1);
    o.y = o.w + static_cast<int>(unit(rng) * span);
    o.color = jitter({0.92, 0.88, 0.55}, 0.15);
    spec.objects.push_back(o);
  }
  return spec;
}

Scene gen_scene(const SceneSpec& spec) {
  spec.validate();
  const int n = spec.size;
  Scene scene{Image(n, n, 3), semantic::SegMap(n, n, kNumClasses)};
  const int horizon_px = static_cast<int>(std::lround(spec.horizon * n));

  for (int y = 0; y < n; ++y) {
    const bool sky = y < horizon_px;
    const auto& color = sky ? spec.sky_color : spec.road_color;
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = color[static_cast<size_t>(c)];
      scene.segmap.at(y, x) = sky ? 0 : 1;
    }
  }

  for (const SceneObject& o : spec.objects) {
    if (o.kind == SceneObject::Kind::kRect) {
      for (int y = o.y; y < o.y + o.h; ++y) {
        for (int x = o.x; x < o.x + o.w; ++x) {
          for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = o.color[static_cast<size_t>(c)];
          scene.segmap.at(y, x) = static_cast<uint8_t>(o.cls);
        }
      }
    } else {
      const int r2 = o.w * o.w;
      for (int y = o.y - o.w; y <= o.y + o.w; ++y) {
        for (int x = o.x - o.w; x <= o.x + o.w; ++x) {
          const int dx = x - o.x, dy = y - o.y;
          if (dx * dx + dy * dy > r2) continue;
          for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = o.color[static_cast<size_t>(c)];
          scene.segmap.at(y, x) = static_cast<uint8_t>(o.cls);
        }
      }
    }
  }
  return scene;
}

void WeatherParams::validate() const {
  RG_CHECK(streak_count >= 0, "streak count must be non-negative");
  RG_CHECK(streak_opacity >= 0.0 && streak_opacity <= 1.0, "streak opacity outside [0,1]");
  RG_CHECK(darkening >= 0.0 && darkening <= 1.0, "darkening outside [0,1]");
  RG_CHECK(reflection >= 0.0 && reflection <= 1.0, "reflection outside [0,1]");
  RG_CHECK(mist_radius >= 0.0, "mist radius must be non-negative");
  RG_CHECK(streak_angle_lo <= streak_angle_hi, "streak angle range inverted");
}

namespace {

void blur_gaussian(Image& img, double sigma) {
  const int half = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * half + 1));
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    k[static_cast<size_t>(i + half)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<size_t>(i + half)];
  }
  for (double& v : k) v /= sum;

  Image tmp = img;
  const int h = img.height, w = img.width;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i)
          acc += k[static_cast<size_t>(i + half)] *
                 img.at(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i)
          acc += k[static_cast<size_t>(i + half)] *
                 tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        img.at(c, y, x) = acc;
      }
    }
  }
}

}  // namespace

Image apply_rain(const Image& clear, const semantic::SegMap& seg,
                 const WeatherParams& wp, uint64_t seed) {
  wp.validate();
  RG_CHECK(clear.height == seg.height && clear.width == seg.width,
           "image/segmap size mismatch in apply_rain");
  Image out = clear;
  const int h = out.height, w = out.width;

  if (wp.darkening > 0.0) {
    const double scale = 1.0 - wp.darkening;
    for (double& v : out.pix) v *= scale;
  }

  if (wp.streak_count > 0 && wp.streak_opacity > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(h));
    std::uniform_real_distribution<double> ulen(h / 8.0, h / 3.0);
    std::uniform_real_distribution<double> uangle(wp.streak_angle_lo, wp.streak_angle_hi);
    const std::array<double, 3> streak_color{0.82, 0.84, 0.88};
    for (int s = 0; s < wp.streak_count; ++s) {
      const double x0 = ux(rng), y0 = uy(rng);
      const double len = ulen(rng);
      const double ang = uangle(rng) * M_PI / 180.0;
      const double dx = std::sin(ang), dy = std::cos(ang);
      for (double t = 0.0; t < len; t += 1.0) {
        const int px = static_cast<int>(std::lround(x0 + t * dx));
        const int py = static_cast<int>(std::lround(y0 + t * dy));
        if (px < 0 || px >= w || py < 0 || py >= h) continue;
        for (int c = 0; c < 3; ++c)
          out.at(c, py, px) = (1.0 - wp.streak_opacity) * out.at(c, py, px) +
                              wp.streak_opacity * streak_color[static_cast<size_t>(c)];
      }
    }
  }

  if (wp.reflection > 0.0) {
    // sky rows start at the first road-class row; mirror what sits above it
    int horizon_px = h;
    for (int y = 0; y < h; ++y) {
      bool road_row = false;
      for (int x = 0; x < w && !road_row; ++x) road_row = seg.at(y, x) == 1;
      if (road_row) {
        horizon_px = y;
        break;
      }
    }
    Image source = out;
    for (int y = 0; y < h; ++y) {
      const int src = 2 * horizon_px - y;
      if (src < 0 || src >= horizon_px) continue;
      for (int x = 0; x < w; ++x) {
        if (seg.at(y, x) != 1) continue;
        for (int c = 0; c < 3; ++c)
          out.at(c, y, x) = (1.0 - wp.reflection) * out.at(c, y, x) +
                            wp.reflection * source.at(c, src, x);
      }
    }
  }

  if (wp.mist_radius > 0.0) blur_gaussian(out, wp.mist_radius);
  return out;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry& e : entries)
    if (e.split == name) out.push_back(&e);
  return out;
}

WeatherParams WeatherRanges::draw(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  WeatherParams wp;
  wp.streak_count = streak_count_lo +
                    static_cast<int>(unit(rng) * (streak_count_hi - streak_count_lo + 1));
  wp.streak_opacity = opacity_lo + unit(rng) * (opacity_hi - opacity_lo);
  wp.darkening = darkening_lo + unit(rng) * (darkening_hi - darkening_lo);
  wp.reflection = reflection_lo + unit(rng) * (reflection_hi - reflection_lo);
  wp.mist_radius = mist_lo + unit(rng) * (mist_hi - mist_lo);
  return wp;
}

DatasetManifest build_dataset(const BuildConfig& cfg) {
  RG_CHECK(cfg.train_per_domain > 0 && cfg.test_per_domain >= 0, "bad dataset counts");
  DatasetManifest manifest;
  manifest.root = cfg.root;

  const int per_domain = cfg.train_per_domain + cfg.test_per_domain;
  struct SplitPlan {
    const char* name;
    int first_id;
    int count;
    bool rainy;
  };
  // Scene ids are disjoint across the two domains: unpaired by construction.
  const SplitPlan plans[] = {
      {"trainA", 0, cfg.train_per_domain, false},
      {"testA", cfg.train_per_domain, cfg.test_per_domain, false},
      {"trainB", per_domain, cfg.train_per_domain, true},
      {"testB", per_domain + cfg.train_per_domain, cfg.test_per_domain, true},
  };

  for (const SplitPlan& plan : plans) {
    const fs::path dir = cfg.root / plan.name;
    std::error_code ec;
    fs::create_directories(dir, ec);
    RG_CHECK(!ec, "cannot create dataset directory ", dir.string());
    for (int i = 0; i < plan.count; ++i) {
      const int scene_id = plan.first_id + i;
      const uint64_t scene_seed = cfg.seed + static_cast<uint64_t>(scene_id);
      Scene scene = gen_scene(random_scene(scene_seed, cfg.image_size));
      Image img = scene.image;
      if (plan.rainy) {
        std::mt19937_64 wp_rng(scene_seed ^ 0x9e3779b97f4a7c15ull);
        const WeatherParams wp = cfg.weather.draw(wp_rng);
        img = apply_rain(scene.image, scene.segmap, wp, scene_seed ^ 0xda942042e4dd58b5ull);
      }
      std::ostringstream stem;
      stem << "scene_" << scene_id;
      ManifestEntry entry;
      entry.split = plan.name;
      entry.image = fs::path(plan.name) / (stem.str() + ".ppm");
      entry.segmap = fs::path(plan.name) / (stem.str() + ".seg.pgm");
      write_image(cfg.root / entry.image, img);
      semantic::save_segmap(cfg.root / entry.segmap, scene.segmap);
      manifest.entries.push_back(std::move(entry));
    }
  }
  save_manifest(cfg.root / "manifest.tsv", manifest);
  return manifest;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  RG_CHECK(out.good(), "cannot write manifest ", path.string());
  for (const ManifestEntry& e : manifest.entries)
    out << e.split << "\t" << e.image.generic_string() << "\t"
        << e.segmap.generic_string() << "\n";
  RG_CHECK(out.good(), "failed writing manifest ", path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  RG_CHECK(in.good(), "cannot open manifest ", path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  std::set<std::string> seen_images;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string image, segmap;
    RG_CHECK(std::getline(ls, e.split, '\t') && std::getline(ls, image, '\t') &&
                 std::getline(ls, segmap),
             "malformed manifest line: ", line);
    e.image = image;
    e.segmap = segmap;
    RG_CHECK(fs::exists(manifest.root / e.image), "manifest references missing image ",
             image);
    RG_CHECK(fs::exists(manifest.root / e.segmap), "manifest references missing segmap ",
             segmap);
    RG_CHECK(seen_images.insert(image).second, "image ", image,
             " appears in more than one split");
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::vector<DomainItem> load_image_folder(const fs::path& path, bool expect_segmaps,
                                          int num_classes) {
  RG_CHECK(fs::exists(path) && fs::is_directory(path), "not a directory: ",
           path.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<DomainItem> items;
  for (const fs::path& f : files) {
    DomainItem item;
    item.image_path = f;
    item.image = read_image(f);
    fs::path seg = f;
    seg.replace_extension();
    seg += ".seg.pgm";
    if (fs::exists(seg)) {
      item.segmap = semantic::load_segmap(seg, num_classes);
      RG_CHECK(item.segmap->height == item.image.height &&
                   item.segmap->width == item.image.width,
               "segmap/image size mismatch for ", f.string());
    } else {
      RG_CHECK(!expect_segmaps, "missing segmap for ", f.string(),
               " (expected ", seg.string(), ")");
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace raingen::synth
