#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "raingen/losses.hpp"
#include "raingen/models.hpp"
#include "raingen/synthdata.hpp"

namespace raingen::harness {

// Flat `key = value` file with '#' comments. Later keys win.
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);
// `key=value` strings from --set flags, applied over the file contents.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides);

struct TrainConfig {
  losses::LossConfig loss;
  models::ModelDims dims;
  models::EncoderTaps taps;
  std::string variant = "M7";  // M1..M7 or "custom"
  int epochs = 50;
  double lr_phase1 = 2e-4;
  double lr_phase2 = 2e-5;
  double phase_boundary = 0.5;  // epoch fraction where the rate drops
  std::string lr_schedule = "step";  // step | linear
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int batch = 1;
  int crop = 64;
  int patches = 256;
  uint64_t seed = 1;
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "runs/out";

  void validate() const;
  double learning_rate(int epoch) const;
};

// Ablation rows: each id selects exactly one (geom, nce) pair.
//   M1 patchnce            M2 ptl+patchnce      M3 tps+patchnce
//   M4 monce (hard)        M5 sence (mPA)       M6 tps+sence (mIoU)
//   M7 tps+sence (mPA)
// "custom" leaves the explicit nce_variant / geom_variant keys in force.
void apply_variant(TrainConfig& cfg);

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv);

struct GenDataConfig {
  synth::BuildConfig build;
};

GenDataConfig gen_config_from_kv(const std::map<std::string, std::string>& kv);

// FNV-1a over the canonical model/loss signature; stored in checkpoints to
// detect config drift.
uint64_t config_digest(const TrainConfig& cfg);

}  // namespace raingen::harness
