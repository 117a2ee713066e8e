#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "evreg/tensor/autograd.hpp"

// Recorded, differentiable primitives. Spatial tensors are channel-last:
// [H,W,C], or [D,H,W,C] when a leading frame/batch axis is present.
namespace evreg::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

/// x[..., C] + b[C]
Var add_bias(const Var& x, const Var& b);
/// x[..., C] * g[C]; g may carry leading singleton axes (e.g. [1,1,C]).
Var mul_channels(const Var& x, const Var& g);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var softmax(const Var& x, std::size_t axis);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Affine map over the last axis: x[..., in] @ w[in, out] (+ b[out]).
Var linear(const Var& x, const Var& w, const Var& b = Var());

Var reshape(const Var& x, Shape shape);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, std::size_t begin, std::size_t end);

/// Non-overlapping k x k average pooling over the two spatial axes.
Var avg_pool(const Var& x, std::size_t k);
inline Var avg_pool2x2(const Var& x) { return avg_pool(x, 2); }
/// [H,W,C] -> [1,1,C]
Var global_avg_pool(const Var& x);
/// [D, ...] -> [...]
Var mean_axis0(const Var& x);

/// Cross-correlation with zero padding. x: [H,W,Ci] or [D,H,W,Ci] (frames
/// share the kernel); k: [kh,kw,Ci,Co] with odd kh, kw.
Var conv2d(const Var& x, const Var& k, std::size_t stride = 1, std::size_t padding = 1);
/// x: [D,H,W,Ci]; k: [kd,kh,kw,Ci,Co]. Valid along depth, same-padded
/// spatially, stride 1. Output [D-kd+1, H, W, Co].
Var conv3d(const Var& x, const Var& k);
/// x: [H,W,C]; k: [kh,kw,C]; same padding, stride 1.
Var depthwise_conv2d(const Var& x, const Var& k);

/// Modulated deformable convolution, stride 1, same padding.
/// offsets: [H,W,2*kh*kw], tap-major (dy,dx) pairs; mask: [H,W,kh*kw].
/// Each tap samples x bilinearly at base + offset (corners outside the image
/// read as zero), scales by its mask and contracts with the kernel.
Var deformable_conv2d(const Var& x, const Var& k, const Var& offsets, const Var& mask);

/// [H,W,C] -> [H, W/2+1, 2C] with real parts in channels [0,C) and imaginary
/// parts in [C,2C).
Var rfft2(const Var& x);
/// [H, W/2+1, 2C] (same layout) -> [H, width, C].
Var irfft2(const Var& spectrum, std::size_t width);
/// Complex elementwise product on the real/imag channel-concatenated layout.
Var complex_mul(const Var& a, const Var& b);

/// Bilinear upsampling of [H,W,C] by an integer factor (half-pixel centers).
Var upsample_bilinear(const Var& x, std::size_t factor);

Var sum(const Var& x);
Var mean(const Var& x);
/// Scalar sum(w * x) with a constant weight array.
Var weighted_sum(const Var& x, const NdArray& w);

}  // namespace evreg::ops

namespace evreg {

using Rng = std::mt19937_64;

NdArray randn(Shape shape, Rng& rng, double stddev = 1.0);
NdArray rand_uniform(Shape shape, Rng& rng, double lo, double hi);

struct SampleResult {
  NdArray values;    // [H',W',C]
  NdArray validity;  // [H',W'], 1 where the coordinate is inside the image
};

/// Samples x: [H,W,C] at continuous (y,x) pixel coordinates coords:
/// [H',W',2]. Coordinates outside [0,H-1] x [0,W-1] yield zeros with
/// validity 0. Integer coordinates reproduce the input exactly.
SampleResult bilinear_sample(const NdArray& x, const NdArray& coords);

}  // namespace evreg
