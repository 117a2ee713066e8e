#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evreg/synth/dataset.hpp"
#include "evreg/synth/scene.hpp"

namespace evreg {

/// Mean over pixels that hold at least one moving-object event of
/// || sum_i w_i r_i ||, with w normalised over the events of each pixel and
/// r_i the event's residual displacement to where its source point sits at t_k.
struct ShiftSummary {
  double mean = 0.0;  // px, >= 0
  std::size_t pixels = 0;
  std::size_t events = 0;
  std::size_t mixed = 0;  // pixels whose events come from more than one object
};

/// Residual when events are fused at their raw locations: r_i is the source
/// object's true motion over [t_i, t_k]. `weights` has one non-negative
/// entry per event (default uniform). No moving-object events gives 0 and a
/// warning.
ShiftSummary fusion_shift(const SceneSpec& spec, const SceneSample& s, const std::vector<double>* weights = nullptr,
                          std::vector<std::string>* warnings = nullptr);

/// Residual after moving each event by (t_k - t_i)/(t_k - t_prev) of the
/// forward flow from provide_flow_gt_noisy on the swept-pixel ground truth
/// (sample.event_flow) with RMS error eps.
ShiftSummary registration_shift(const SceneSpec& spec, const SceneSample& s, double eps, std::uint64_t seed,
                                const std::vector<double>* weights = nullptr,
                                std::vector<std::string>* warnings = nullptr);

struct MisalignmentRow {
  std::size_t scene = 0, index = 0;
  double delta_fuse = 0.0, delta_reg = 0.0;
  std::size_t pixels = 0;  // 0: no moving-object events, left out of the means
};

struct MisalignmentReport {
  double eps = 0.0;
  double delta_fuse = 0.0, delta_reg = 0.0;  // means over rows with pixels > 0
  std::vector<MisalignmentRow> rows;
  std::vector<std::string> warnings;
};

/// Regenerates every scene of the recipe (per-event sources are not stored
/// on disk) and measures both shifts on every sample. Flow noise is seeded
/// from (seed, scene, index).
MisalignmentReport measure_misalignment(const DatasetSpec& ds, double eps, std::uint64_t seed = 0);

/// Per-scene means of a report's rows, indexed by scene.
std::vector<MisalignmentRow> scene_means(const MisalignmentReport& r);

/// "sample,delta_fuse,delta_reg,eps"; sample is the row's position, which
/// is the manifest entry order.
void write_misalignment_csv(const MisalignmentReport& r, const std::filesystem::path& path);

}  // namespace evreg
