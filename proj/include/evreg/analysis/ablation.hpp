#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evreg/synth/dataset.hpp"

namespace evreg {

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;
};

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double miou = 0.0, accuracy = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  /// (variant, median mIoU over its seeds), best first; ties keep run order.
  std::vector<std::pair<std::string, double>> ordering;

  double median(const std::string& variant) const;
  /// Fraction of the seeds both variants ran on where a's mIoU is strictly
  /// higher than b's. Throws when they share no seed.
  double win_rate(const std::string& a, const std::string& b) const;
};

/// <root>/<variant>/seed<k>/checkpoint.brn for every pair.
std::vector<AblationRun> ablation_layout(const std::filesystem::path& root, const std::vector<std::string>& variants,
                                         const std::vector<std::uint64_t>& seeds);

/// Scores every checkpoint on the validation split (the last `val_scenes`
/// scenes) of the manifest. All missing checkpoints are listed in one error
/// before anything is evaluated.
AblationReport ablation_harness(const Manifest& data, const std::vector<AblationRun>& runs,
                                std::size_t val_scenes = 2);

/// "variant,seed,miou,acc"
void write_ablation_csv(const AblationReport& r, const std::filesystem::path& path);

}  // namespace evreg
