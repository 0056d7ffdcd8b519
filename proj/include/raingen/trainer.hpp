#pragma once

#include <filesystem>
#include <vector>

#include "raingen/checkpoint.hpp"
#include "raingen/config.hpp"
#include "raingen/metrics.hpp"
#include "raingen/models.hpp"

namespace raingen::harness {

class Adam {
 public:
  Adam(double beta1, double beta2, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(models::ParamSet& params, const std::vector<std::vector<double>>& grads,
            double lr);

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double loss_d = 0.0;
  double loss_gan = 0.0;
  double loss_nce = 0.0;
  double loss_geom = 0.0;
  double loss_total = 0.0;
  double point_to_segment = 0.0;
};

struct TrainResult {
  models::Models models;
  std::vector<EpochLog> logs;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
};

// Alternating optimization, discriminator first, on unpaired crop pairs.
// The per-epoch log carries every loss term, the point-to-segment
// diagnostic and the learning rate; everything is a pure function of
// (seed, config, dataset).
TrainResult train(const TrainConfig& cfg);

std::vector<EpochLog> load_train_log(const std::filesystem::path& path);

// Translates every image in the folder at native size (edge-padded to a
// multiple of 8) and writes lossless rasters under matching filenames.
void translate(const TrainConfig& cfg, const std::filesystem::path& checkpoint_path,
               const std::filesystem::path& input_folder,
               const std::filesystem::path& output_folder);

// Translates test split A, scores it against test split B, writes the
// structured report next to the checkpoint (or at report_path).
metrics::DomainReport evaluate(const TrainConfig& cfg,
                               const std::filesystem::path& checkpoint_path,
                               const std::filesystem::path& report_path);

struct AblationRow {
  std::string variant;
  std::string geom_variant;
  std::string nce_variant;
  metrics::DomainReport report;
  double final_loss_geom = 0.0;
  std::filesystem::path run_dir;
};

// Trains every listed variant from the same seed and init, evaluates each,
// and writes one table row per variant.
std::vector<AblationRow> ablate(const TrainConfig& base,
                                const std::vector<std::string>& variants,
                                const std::filesystem::path& table_path);

}  // namespace raingen::harness
