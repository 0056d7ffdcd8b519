#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "raingen/check.hpp"

namespace raingen::semantic {

// Per-pixel class-index map, row-major.
struct SegMap {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<uint8_t> classes;

  SegMap() = default;
  SegMap(int h, int w, int nc)
      : height(h), width(w), num_classes(nc),
        classes(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int y, int x) { return classes[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return classes[static_cast<size_t>(y) * width + x]; }
};

struct SemanticScore {
  double mpa = 0.0;
  double miou = 0.0;
};

// Mean per-class pixel accuracy, averaged over the classes present in the
// reference map sx (the translation source).
double mpa(const SegMap& sx, const SegMap& sy);

// Mean per-class intersection-over-union over classes present in either map.
double miou(const SegMap& sx, const SegMap& sy);

SemanticScore score(const SegMap& sx, const SegMap& sy);

// Single-channel 8-bit raster whose pixel values are class indices.
SegMap load_segmap(const std::filesystem::path& path, int num_classes);
void save_segmap(const std::filesystem::path& path, const SegMap& map);

// Class indices must not be interpolated, so resizing is nearest-neighbor.
SegMap resize_nearest(const SegMap& map, int h, int w);
SegMap crop(const SegMap& map, int y0, int x0, int h, int w);

// Lazily computed (clear id, rainy id) -> score table. Scoring is pure, so
// cached entries equal direct recomputation. Single-writer/multi-reader:
// fill happens on the training thread, concurrent reads are safe once a
// pair has been computed.
class ScoreCache {
 public:
  ScoreCache(const std::vector<SegMap>* domain_a, const std::vector<SegMap>* domain_b)
      : a_(domain_a), b_(domain_b) {}

  SemanticScore get(size_t a_id, size_t b_id);

 private:
  const std::vector<SegMap>* a_;
  const std::vector<SegMap>* b_;
  std::map<std::pair<size_t, size_t>, SemanticScore> cache_;
};

}  // namespace raingen::semantic
