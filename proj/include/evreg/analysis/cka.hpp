#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "evreg/model/model.hpp"
#include "evreg/synth/dataset.hpp"

namespace evreg {

/// Rows are sampled pixel positions, columns feature dimensions.
struct FeatureMatrix {
  NdArray x;  // [n,d]
  bool centered = false;
};

/// Subtracts each column's mean in place and sets the flag.
void center_columns(FeatureMatrix& m);

/// Stacks the pixels of equally sized [h,w,d] maps and keeps at most
/// max_rows of them, chosen uniformly without replacement from `seed`. Two
/// calls with the same seed and the same map geometry pick the same pixels,
/// whatever d is. The result is centred.
FeatureMatrix sample_features(const std::vector<NdArray>& maps, std::size_t max_rows, std::uint64_t seed);

/// ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) in [0,1]; 0 when either
/// denominator norm is 0. Both matrices must be centred with the same n >= 2.
double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y);

struct CkaRow {
  std::size_t scene = 0;
  double flow_rgb = 0.0;   // pooled forward flow vs encoder features
  double met_rgb = 0.0;    // M_f vs encoder features; 0 when the model has no M_f
  double voxel_rgb = 0.0;  // pooled voxel grid vs encoder features
};

/// Per scene of the manifest: encoder features of `model` against the
/// flow-derived and voxel representations of the same samples, all at H/4,
/// over at most 4096 pixels.
std::vector<CkaRow> cka_by_scene(const BrenetModel& model, const Manifest& m, std::uint64_t seed = 0);

/// "scene,cka_flow_rgb,cka_met_rgb,cka_voxel_rgb"
void write_cka_csv(const std::vector<CkaRow>& rows, const std::filesystem::path& path);

}  // namespace evreg
