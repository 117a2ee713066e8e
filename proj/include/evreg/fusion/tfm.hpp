#pragma once

#include "evreg/tensor/nn.hpp"

namespace evreg {

struct TfmConfig {
  std::size_t channels = 64;
  std::size_t hidden = 64;
  double max_offset = 4.0;  // offsets are tanh(.) * max_offset pixels
  bool bias = true;
};

struct TfmTrace {
  NdArray aligned_f, aligned_b;  // deformably aligned image features per direction
  NdArray stacked;               // [h,w,3C] concat before the depthwise stage
};

/// Temporal fusion. Each direction predicts offsets and masks for one
/// shared deformable conv over F_I; the aligned features are gated by
/// g = mlp(F_I) and stacked with g, then depthwise 3x3 and pointwise
/// 3C -> C, added to F_I:
///   F' = pw(dw(concat(DC_f * g, DC_b * g, g))) + F_I
class Tfm {
 public:
  Tfm() = default;
  Tfm(const TfmConfig& cfg, Rng& rng);
  Var operator()(const Var& fr_f, const Var& fr_b, const Var& fi, TfmTrace* trace = nullptr) const;

  /// Test hook: copies the forward offset/mask networks onto the backward
  /// ones and the first concat group's depthwise/pointwise weights onto the
  /// second, making the module symmetric under swapping directions.
  void tie_directions();

  nn::ParamList params() const;

 private:
  nn::Mlp f1_, f2_, f3_, f4_, gate_;
  Var dc_k_, dw_k_, dw_b_;
  nn::Linear pw_;
  std::size_t channels_ = 0;
  double max_offset_ = 4.0;
  bool bias_ = true;
};

}  // namespace evreg
