#pragma once

#include <optional>
#include <utility>

#include "evreg/tensor/nn.hpp"

namespace evreg {

struct BrmConfig {
  std::size_t channels = 64;
  std::size_t hidden = 64;
  std::size_t max_tokens = 4096;  // h*w guard for the attention matrix
  bool bias = true;
};

/// Intermediate values of one registration pass, for inspection.
struct BrmTrace {
  NdArray spatial_mask;  // A_s [h, w/2+1, 2C]
  NdArray channel_mask;  // A_c [1,1,C]
  NdArray attention;     // [T,T] rows sum to 1
  NdArray fs, fc;        // F_s, F_c [h,w,C]
};

/// Single-head cross-attention over flattened tokens: softmax(Q K^T /
/// sqrt(d)) V with Q = q_src wq, K = kv_src wk, V = kv_src wv.
/// q_src/kv_src: [T,C]. `weights` receives the [T,T] attention matrix.
Var cross_attention(const Var& q_src, const Var& kv_src, const Var& wq, const Var& wk,
                    const Var& wv, NdArray* weights = nullptr);

/// Bidirectional registration module. Both directions share all weights.
///   mix = mlp_m(concat(M, F_I))
///   A_s = sigmoid(relu(conv3x3(rfft2(mix) / sqrt(h w))));  F_s = irfft2(A_s * rfft2(mlp_i(F_I)))
///   A_c = sigmoid(relu(gap(F_s + mix)));        F_c = irfft2(A_c * rfft2(F_s))
///   F_r = cross_attention(F_I, F_c)
/// Masks multiply the real and imaginary channel blocks elementwise.
class Brm {
 public:
  Brm() = default;
  Brm(const BrmConfig& cfg, Rng& rng);

  Var spatial_attention(const Var& m, const Var& fi, BrmTrace* trace = nullptr) const;
  Var channel_attention(const Var& fs, const Var& m, const Var& fi, BrmTrace* trace = nullptr) const;
  /// One direction: [h,w,C] MET and image features -> registered features.
  Var register_one(const Var& m, const Var& fi, BrmTrace* trace = nullptr) const;
  std::pair<Var, Var> operator()(const Var& m_f, const Var& m_b, const Var& fi) const;

  /// Test hooks: replace A_s / A_c by a constant (nullopt restores).
  void force_spatial_mask(std::optional<double> v) { force_spatial_ = v; }
  void force_channel_mask(std::optional<double> v) { force_channel_ = v; }

  /// mlp_i, whose output the spatial mask gates.
  const nn::Mlp& image_mlp() const { return img_; }

  nn::ParamList params() const;

 private:
  Var mix(const Var& m, const Var& fi) const;

  nn::Mlp mix_, img_;
  nn::Conv2d spec_conv_;
  nn::Linear wq_, wk_, wv_;
  std::size_t channels_ = 0, max_tokens_ = 4096;
  std::optional<double> force_spatial_, force_channel_;
};

}  // namespace evreg
