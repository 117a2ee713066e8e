#pragma once

#include <utility>

#include "evreg/events/events.hpp"
#include "evreg/flow/flow.hpp"
#include "evreg/tensor/nn.hpp"

namespace evreg {

struct MetConfig {
  std::size_t bins = 1;                // B, input channels of the first 3D conv
  std::size_t temporal_channels = 32;  // C_t
  std::size_t channels = 64;           // C
  std::size_t hidden = 64;             // hidden width of every MLP
  double offset_scale = 4.0;           // offsets are tanh(.) * scale pixels
  bool bias = true;
};

/// Three blocks of 3D conv (2x3x3, valid in time) + relu and 2D conv 3x3 +
/// relu. Blocks 1 and 2 end in 2x2 average pooling; block 3 collapses the
/// frame axis by its mean before the 2D conv. [N,H,W,B] -> [H/4,W/4,C_t].
class TemporalConv {
 public:
  TemporalConv() = default;
  TemporalConv(const MetConfig& cfg, Rng& rng);
  Var operator()(const Var& stack) const;
  Var operator()(const EventTensorStack& stack) const { return (*this)(constant(stack.data)); }
  nn::ParamList params() const;

 private:
  struct Block {
    Var k3, b3;
    nn::Conv2d conv;
  };
  Block blocks_[3];
  bool bias_ = true;
};

/// Displacements averaged over factor x factor cells and expressed in cells.
NdArray pool_flow(const NdArray& u, std::size_t factor);

/// irfft2(rfft2(a) * rfft2(b)) / (H W): per-channel circular convolution
/// of a and b, normalised by the grid size.
Var spectral_product(const Var& a, const Var& b);

/// Coarse-to-fine estimator. Flow is lifted to C channels, deformably
/// convolved with offsets and masks predicted from the temporal features,
/// multiplied with the lifted flow in the frequency domain and mapped back:
///   M = mlp(spectral_product(f(O), deform(f(O); h))) + f(O).
class Cfe {
 public:
  Cfe() = default;
  Cfe(const MetConfig& cfg, Rng& rng);
  /// flow: [h,w,2] on the grid of h: [h,w,C_t]. Returns [h,w,C].
  Var operator()(const Var& flow, const Var& h) const;
  nn::ParamList params() const;
  std::size_t channels() const { return channels_; }

 private:
  nn::Mlp lift_, offsets_, masks_, out_;
  Var deform_k_;
  std::size_t channels_ = 0;
  double offset_scale_ = 4.0;
};

struct MetPair {
  Var forward;
  Var backward;
};

/// M_f = cfe(O_f, tconv(I_E)); M_b = cfe(O_b, tconv(reverse(I_E))). Both
/// directions share the same modules. Flows are full resolution.
MetPair build_bidirectional_met(const TemporalConv& tconv, const Cfe& cfe,
                                const EventTensorStack& stack, const FlowPair& flows);

}  // namespace evreg
