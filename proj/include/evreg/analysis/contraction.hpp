#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evreg/flow/flow.hpp"
#include "evreg/synth/dataset.hpp"

namespace evreg {

/// a = texture(p), b = texture(p - (dy,dx)) for a low-frequency analytic
/// texture with non-zero gradient almost everywhere.
LkImages smooth_shifted_pair(std::size_t H, std::size_t W, double dy, double dx);

struct ContractionRow {
  std::string refiner;  // "linear" or "lk"
  std::size_t case_id = 0;
  double rho = 0.0;     // contraction rate of the linear refiner; fitted rate for lk
  int J = 0;
  std::vector<double> errors;  // u^(0..J)
  double bound = 0.0;
  bool holds = false;
  bool decreasing = false;  // errors strictly drop over the first min(3,J) steps
};

/// Linear refiners at rates {0.3, 0.5, 0.8} and depths 1..5 on consecutive
/// ground-truth flows of the recipe's first scene, plus Gauss-Newton LK on
/// three smooth shifted pairs (J = 3).
std::vector<ContractionRow> contraction_sweep(const DatasetSpec& ds, std::uint64_t seed = 0);

/// "refiner,case,rho,J,final_error,bound,holds,decreasing"
void write_contraction_csv(const std::vector<ContractionRow>& rows, const std::filesystem::path& path);

}  // namespace evreg
