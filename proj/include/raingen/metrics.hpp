#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "raingen/image.hpp"
#include "raingen/losses.hpp"

namespace raingen::metrics {

using FeatureVec = std::vector<double>;

// Documented featurization for image-set statistics: average-pool to 16x16,
// grayscale by channel mean, flatten to 256 values.
FeatureVec featurize(const Image& img);

// Median pairwise Euclidean distance over the pooled sets (the "auto"
// bandwidth of mmd2).
double median_pairwise_distance(const std::vector<FeatureVec>& a,
                                const std::vector<FeatureVec>& b);

// Biased (V-statistic) squared maximum mean discrepancy with a Gaussian
// kernel exp(-||u-v||^2 / (2 sigma^2)); non-negative by construction and
// exactly zero on identical sets. Values are reported raw (no display
// scaling).
double mmd2(const std::vector<FeatureVec>& a, const std::vector<FeatureVec>& b,
            std::optional<double> bandwidth = std::nullopt);

// 2 E||a-b|| - E||a-a'|| - E||b-b'|| over all (V-statistic) pairs, clamped
// at zero for reporting.
double energy_distance(const std::vector<FeatureVec>& a,
                       const std::vector<FeatureVec>& b);

// Euclidean distance from flattened dz to the closed segment [dx, dy],
// normalized by sqrt(HW).
double point_to_segment(const losses::DiscriminatorMap& dx,
                        const losses::DiscriminatorMap& dy,
                        const losses::DiscriminatorMap& dz);

struct DmapTriple {
  losses::DiscriminatorMap dx, dy, dz;
};

struct DomainReport {
  double mmd2_gen_rainy = 0.0;
  double ed_gen_rainy = 0.0;
  double mmd2_clear_rainy = 0.0;
  double ed_clear_rainy = 0.0;
  double mean_segment_distance = 0.0;
  int64_t n_clear = 0;
  int64_t n_rainy = 0;
  int64_t n_generated = 0;
  double bandwidth = 0.0;
};

// Gap statistics of generated-vs-rainy next to the clear-vs-rainy baseline.
// One bandwidth (median over pooled clear+rainy features) serves both mmd2
// computations so the two numbers are comparable.
DomainReport domain_report(const std::vector<FeatureVec>& clear,
                           const std::vector<FeatureVec>& rainy,
                           const std::vector<FeatureVec>& generated,
                           const std::vector<DmapTriple>& dmaps);

// Line-delimited records, one {"key":..,"value":..} object per line.
void save_report(const std::filesystem::path& path, const DomainReport& report);
DomainReport load_report(const std::filesystem::path& path);

}  // namespace raingen::metrics
