#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "raingen/image.hpp"
#include "raingen/semantic.hpp"

namespace raingen::synth {

// Class layout: 0 sky, 1 road, 2 vehicle (rectangles), 3 light (circles).
constexpr int kNumClasses = 4;

struct SceneObject {
  enum class Kind { kRect, kCircle };
  Kind kind = Kind::kRect;
  int cls = 2;
  int x = 0, y = 0;  // rect: top-left; circle: center
  int w = 0, h = 0;  // rect extent; circle: radius in w
  std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct SceneSpec {
  uint64_t seed = 0;
  int size = 64;
  double horizon = 0.45;  // fraction of height
  std::array<double, 3> sky_color{0.65, 0.72, 0.82};
  std::array<double, 3> road_color{0.32, 0.32, 0.34};
  std::vector<SceneObject> objects;  // drawn in order, later on top

  void validate() const;
};

// Procedurally drawn spec: jittered palette, 2-4 vehicles on the road,
// 1-3 lights in the sky.
SceneSpec random_scene(uint64_t seed, int size);

struct Scene {
  Image image;
  semantic::SegMap segmap;
};

// Deterministic rendering; the segmap records the topmost object class per
// pixel.
Scene gen_scene(const SceneSpec& spec);

struct WeatherParams {
  int streak_count = 0;
  double streak_angle_lo = -10.0;  // degrees from vertical
  double streak_angle_hi = 10.0;
  double streak_opacity = 0.0;   // [0,1]
  double darkening = 0.0;        // [0,1], 0 leaves the image unchanged
  double reflection = 0.0;       // [0,1] road-reflection strength
  double mist_radius = 0.0;      // gaussian sigma in pixels

  void validate() const;
};

// Darkens, composites seeded streaks, mirrors above-horizon content onto
// road pixels, then mist-blurs. The segmap is untouched: a scene and its
// rainy rendering stay perfectly aligned semantically.
Image apply_rain(const Image& clear, const semantic::SegMap& seg,
                 const WeatherParams& wp, uint64_t seed);

struct ManifestEntry {
  std::string split;  // trainA / testA / trainB / testB
  std::filesystem::path image;
  std::filesystem::path segmap;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(const std::string& name) const;
};

struct WeatherRanges {
  int streak_count_lo = 40, streak_count_hi = 80;
  double opacity_lo = 0.20, opacity_hi = 0.35;
  double darkening_lo = 0.25, darkening_hi = 0.45;
  double reflection_lo = 0.30, reflection_hi = 0.50;
  double mist_lo = 0.4, mist_hi = 0.8;

  WeatherParams draw(std::mt19937_64& rng) const;
};

struct BuildConfig {
  std::filesystem::path root;
  int train_per_domain = 8;
  int test_per_domain = 2;
  int image_size = 64;
  uint64_t seed = 0;
  WeatherRanges weather;
};

// Writes images, segmaps and the manifest. Domain A keeps clear renderings,
// domain B holds rainy renderings of different scenes, so the two domains
// are unpaired by construction.
DatasetManifest build_dataset(const BuildConfig& cfg);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct DomainItem {
  std::filesystem::path image_path;
  Image image;
  std::optional<semantic::SegMap> segmap;
};

// Loads every .ppm in the folder in lexicographic order; a segmap named
// <stem>.seg.pgm sits beside its image. Missing segmaps only fail when the
// caller requires them.
std::vector<DomainItem> load_image_folder(const std::filesystem::path& path,
                                          bool expect_segmaps,
                                          int num_classes = kNumClasses);

}  // namespace raingen::synth
