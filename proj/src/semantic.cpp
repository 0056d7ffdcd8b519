#include "raingen/semantic.hpp"

#include "raingen/image.hpp"

namespace raingen::semantic {

namespace {
void check_pair(const SegMap& sx, const SegMap& sy) {
  RG_CHECK(sx.height == sy.height && sx.width == sy.width,
           "segmap dimension mismatch: ", sx.height, "x", sx.width, " vs ", sy.height,
           "x", sy.width);
  RG_CHECK(sx.num_classes == sy.num_classes, "segmap class count mismatch: ",
           sx.num_classes, " vs ", sy.num_classes);
  RG_CHECK(!sx.classes.empty(), "segmap has no pixels");
}
}  // namespace

double mpa(const SegMap& sx, const SegMap& sy) {
  check_pair(sx, sy);
  std::vector<int64_t> total(static_cast<size_t>(sx.num_classes), 0);
  std::vector<int64_t> correct(static_cast<size_t>(sx.num_classes), 0);
  for (size_t i = 0; i < sx.classes.size(); ++i) {
    const uint8_t c = sx.classes[i];
    ++total[c];
    if (sy.classes[i] == c) ++correct[c];
  }
  double acc = 0.0;
  int present = 0;
  for (int c = 0; c < sx.num_classes; ++c) {
    if (total[static_cast<size_t>(c)] == 0) continue;
    acc += static_cast<double>(correct[static_cast<size_t>(c)]) /
           static_cast<double>(total[static_cast<size_t>(c)]);
    ++present;
  }
  return acc / static_cast<double>(present);
}

double miou(const SegMap& sx, const SegMap& sy) {
  check_pair(sx, sy);
  std::vector<int64_t> inter(static_cast<size_t>(sx.num_classes), 0);
  std::vector<int64_t> uni(static_cast<size_t>(sx.num_classes), 0);
  for (size_t i = 0; i < sx.classes.size(); ++i) {
    const uint8_t cx = sx.classes[i];
    const uint8_t cy = sy.classes[i];
    if (cx == cy) {
      ++inter[cx];
      ++uni[cx];
    } else {
      ++uni[cx];
      ++uni[cy];
    }
  }
  double acc = 0.0;
  int present = 0;
  for (int c = 0; c < sx.num_classes; ++c) {
    if (uni[static_cast<size_t>(c)] == 0) continue;
    acc += static_cast<double>(inter[static_cast<size_t>(c)]) /
           static_cast<double>(uni[static_cast<size_t>(c)]);
    ++present;
  }
  return acc / static_cast<double>(present);
}

SemanticScore score(const SegMap& sx, const SegMap& sy) {
  return {mpa(sx, sy), miou(sx, sy)};
}

SegMap load_segmap(const std::filesystem::path& path, int num_classes) {
  RasterBytes raster = read_pnm(path);
  RG_CHECK(raster.channels == 1, "segmap ", path.string(),
           " must be single-channel, got ", raster.channels);
  SegMap map(raster.height, raster.width, num_classes);
  for (size_t i = 0; i < raster.bytes.size(); ++i) {
    RG_CHECK(raster.bytes[i] < num_classes, "segmap ", path.string(),
             " contains class index ", static_cast<int>(raster.bytes[i]),
             " >= num_classes ", num_classes);
    map.classes[i] = raster.bytes[i];
  }
  return map;
}

void save_segmap(const std::filesystem::path& path, const SegMap& map) {
  RasterBytes raster;
  raster.height = map.height;
  raster.width = map.width;
  raster.channels = 1;
  raster.bytes = map.classes;
  write_pnm(path, raster);
}

SegMap resize_nearest(const SegMap& map, int h, int w) {
  RG_CHECK(h > 0 && w > 0, "resize_nearest to empty size");
  SegMap out(h, w, map.num_classes);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(static_cast<int>(static_cast<int64_t>(y) * map.height / h),
                            map.height - 1);
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(static_cast<int>(static_cast<int64_t>(x) * map.width / w),
                              map.width - 1);
      out.at(y, x) = map.at(sy, sx);
    }
  }
  return out;
}

SegMap crop(const SegMap& map, int y0, int x0, int h, int w) {
  RG_CHECK(y0 >= 0 && x0 >= 0 && y0 + h <= map.height && x0 + w <= map.width,
           "segmap crop window out of bounds");
  SegMap out(h, w, map.num_classes);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = map.at(y0 + y, x0 + x);
  return out;
}

SemanticScore ScoreCache::get(size_t a_id, size_t b_id) {
  RG_CHECK(a_ && b_ && a_id < a_->size() && b_id < b_->size(),
           "score cache lookup with missing id (", a_id, ",", b_id, ")");
  const auto key = std::make_pair(a_id, b_id);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  SemanticScore s = score((*a_)[a_id], (*b_)[b_id]);
  cache_.emplace(key, s);
  return s;
}

}  // namespace raingen::semantic
