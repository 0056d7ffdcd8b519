#include "raingen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace raingen::metrics {

FeatureVec featurize(const Image& img) {
  constexpr int kBins = 16;
  RG_CHECK(img.height >= kBins && img.width >= kBins, "featurize needs at least ",
           kBins, "x", kBins, " images, got ", img.height, "x", img.width);
  FeatureVec out(kBins * kBins, 0.0);
  for (int by = 0; by < kBins; ++by) {
    const int y0 = by * img.height / kBins;
    const int y1 = (by + 1) * img.height / kBins;
    for (int bx = 0; bx < kBins; ++bx) {
      const int x0 = bx * img.width / kBins;
      const int x1 = (bx + 1) * img.width / kBins;
      double acc = 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < img.channels; ++c) acc += img.at(c, y, x);
      out[static_cast<size_t>(by * kBins + bx)] =
          acc / (static_cast<double>(y1 - y0) * (x1 - x0) * img.channels);
    }
  }
  return out;
}

namespace {

void check_sets(const std::vector<FeatureVec>& a, const std::vector<FeatureVec>& b) {
  RG_CHECK(!a.empty() && !b.empty(), "metric on an empty set");
  const size_t dim = a[0].size();
  for (const auto* set : {&a, &b})
    for (const FeatureVec& v : *set)
      RG_CHECK(v.size() == dim, "feature dimension mismatch: ", v.size(), " vs ", dim);
}

double sq_dist(const FeatureVec& u, const FeatureVec& v) {
  double acc = 0.0;
  for (size_t i = 0; i < u.size(); ++i) acc += (u[i] - v[i]) * (u[i] - v[i]);
  return acc;
}

}  // namespace

double median_pairwise_distance(const std::vector<FeatureVec>& a,
                                const std::vector<FeatureVec>& b) {
  check_sets(a, b);
  std::vector<const FeatureVec*> pooled;
  for (const FeatureVec& v : a) pooled.push_back(&v);
  for (const FeatureVec& v : b) pooled.push_back(&v);
  std::vector<double> dists;
  for (size_t i = 0; i < pooled.size(); ++i)
    for (size_t j = i + 1; j < pooled.size(); ++j)
      dists.push_back(std::sqrt(sq_dist(*pooled[i], *pooled[j])));
  if (dists.empty()) return 0.0;
  std::sort(dists.begin(), dists.end());
  return dists[dists.size() / 2];
}

double mmd2(const std::vector<FeatureVec>& a, const std::vector<FeatureVec>& b,
            std::optional<double> bandwidth) {
  check_sets(a, b);
  double sigma = bandwidth.value_or(median_pairwise_distance(a, b));
  if (sigma <= 0.0) sigma = 1.0;  // degenerate pooled set: every kernel value is 1
  const double denom = 2.0 * sigma * sigma;

  auto kernel_sum = [&](const std::vector<FeatureVec>& u, const std::vector<FeatureVec>& v) {
    double acc = 0.0;
    for (const FeatureVec& x : u)
      for (const FeatureVec& y : v) acc += std::exp(-sq_dist(x, y) / denom);
    return acc;
  };
  const double m = static_cast<double>(a.size());
  const double n = static_cast<double>(b.size());
  const double kaa = kernel_sum(a, a) / (m * m);
  const double kbb = kernel_sum(b, b) / (n * n);
  const double kab = kernel_sum(a, b) / (m * n);
  const double v = kaa + kbb - 2.0 * kab;
  // the V-statistic is non-negative; rounding on near-identical sets can
  // leave a stray -1e-18
  return v < 0.0 ? 0.0 : v;
}

double energy_distance(const std::vector<FeatureVec>& a, const std::vector<FeatureVec>& b) {
  check_sets(a, b);
  auto dist_mean = [](const std::vector<FeatureVec>& u, const std::vector<FeatureVec>& v) {
    double acc = 0.0;
    for (const FeatureVec& x : u)
      for (const FeatureVec& y : v) acc += std::sqrt(sq_dist(x, y));
    return acc / (static_cast<double>(u.size()) * static_cast<double>(v.size()));
  };
  const double value = 2.0 * dist_mean(a, b) - dist_mean(a, a) - dist_mean(b, b);
  return value < 0.0 ? 0.0 : value;
}

double point_to_segment(const losses::DiscriminatorMap& dx,
                        const losses::DiscriminatorMap& dy,
                        const losses::DiscriminatorMap& dz) {
  RG_CHECK(dx.height == dy.height && dx.width == dy.width && dx.height == dz.height &&
               dx.width == dz.width,
           "point_to_segment: map shape mismatch");
  const size_t n = dx.p.size();
  double zx_yx = 0.0, yx_yx = 0.0;
  for (size_t i = 0; i < n; ++i) {
    zx_yx += (dz.p[i] - dx.p[i]) * (dy.p[i] - dx.p[i]);
    yx_yx += (dy.p[i] - dx.p[i]) * (dy.p[i] - dx.p[i]);
  }
  double t = yx_yx > 0.0 ? zx_yx / yx_yx : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double d2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = (dz.p[i] - dx.p[i]) - t * (dy.p[i] - dx.p[i]);
    d2 += r * r;
  }
  return std::sqrt(d2) / std::sqrt(static_cast<double>(n));
}

DomainReport domain_report(const std::vector<FeatureVec>& clear,
                           const std::vector<FeatureVec>& rainy,
                           const std::vector<FeatureVec>& generated,
                           const std::vector<DmapTriple>& dmaps) {
  DomainReport r;
  r.n_clear = static_cast<int64_t>(clear.size());
  r.n_rainy = static_cast<int64_t>(rainy.size());
  r.n_generated = static_cast<int64_t>(generated.size());
  // one bandwidth from the two reference domains keeps the generated-vs-
  // baseline comparison on the same kernel
  r.bandwidth = median_pairwise_distance(clear, rainy);
  if (r.bandwidth <= 0.0) r.bandwidth = 1.0;
  r.mmd2_gen_rainy = mmd2(generated, rainy, r.bandwidth);
  r.mmd2_clear_rainy = mmd2(clear, rainy, r.bandwidth);
  r.ed_gen_rainy = energy_distance(generated, rainy);
  r.ed_clear_rainy = energy_distance(clear, rainy);
  double acc = 0.0;
  for (const DmapTriple& t : dmaps) acc += point_to_segment(t.dx, t.dy, t.dz);
  r.mean_segment_distance = dmaps.empty() ? 0.0 : acc / static_cast<double>(dmaps.size());
  return r;
}

namespace {
const std::vector<std::pair<const char*, double DomainReport::*>> kReportDoubles = {
    {"mmd2_gen_rainy", &DomainReport::mmd2_gen_rainy},
    {"ed_gen_rainy", &DomainReport::ed_gen_rainy},
    {"mmd2_clear_rainy", &DomainReport::mmd2_clear_rainy},
    {"ed_clear_rainy", &DomainReport::ed_clear_rainy},
    {"mean_segment_distance", &DomainReport::mean_segment_distance},
    {"bandwidth", &DomainReport::bandwidth},
};
const std::vector<std::pair<const char*, int64_t DomainReport::*>> kReportCounts = {
    {"n_clear", &DomainReport::n_clear},
    {"n_rainy", &DomainReport::n_rainy},
    {"n_generated", &DomainReport::n_generated},
};
}  // namespace

void save_report(const std::filesystem::path& path, const DomainReport& report) {
  std::ofstream out(path);
  RG_CHECK(out.good(), "cannot write report ", path.string());
  for (const auto& [key, member] : kReportDoubles) {
    nlohmann::json j{{"key", key}, {"value", report.*member}};
    out << j.dump() << "\n";
  }
  for (const auto& [key, member] : kReportCounts) {
    nlohmann::json j{{"key", key}, {"value", report.*member}};
    out << j.dump() << "\n";
  }
  RG_CHECK(out.good(), "failed writing report ", path.string());
}

DomainReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  RG_CHECK(in.good(), "cannot open report ", path.string());
  DomainReport r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    const std::string key = j.at("key").get<std::string>();
    bool found = false;
    for (const auto& [name, member] : kReportDoubles) {
      if (key == name) {
        r.*member = j.at("value").get<double>();
        found = true;
      }
    }
    for (const auto& [name, member] : kReportCounts) {
      if (key == name) {
        r.*member = j.at("value").get<int64_t>();
        found = true;
      }
    }
    RG_CHECK(found, "unknown report key: ", key);
  }
  return r;
}

}  // namespace raingen::metrics
