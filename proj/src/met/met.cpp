#include "evreg/met/met.hpp"

#include <cmath>

namespace evreg {

using namespace ops;

namespace {

// Appends one zero frame so a single remaining frame can still meet a
// depth-2 kernel.
Var pad_frame(const Var& x) {
  const Shape s = x.shape();
  const std::size_t frame = x.value().size() / s[0];
  const Var flat = reshape(x, {s[0], frame});
  const Var zeros = constant(NdArray({s[0], frame}));
  Shape out = s;
  out[0] *= 2;
  // [D, 2*frame] rows hold (frame, zero); only D == 1 reaches here.
  return reshape(concat_channels({flat, zeros}), out);
}

}  // namespace

TemporalConv::TemporalConv(const MetConfig& cfg, Rng& rng) : bias_(cfg.bias) {
  std::size_t in = cfg.bins;
  const std::size_t ct = cfg.temporal_channels;
  for (Block& b : blocks_) {
    const double std3 = std::sqrt(2.0 / static_cast<double>(2 * 9 * in));
    b.k3 = parameter(randn({2, 3, 3, in, ct}, rng, std3));
    if (bias_) b.b3 = parameter(NdArray({ct}));
    b.conv = nn::Conv2d(ct, ct, 3, 1, rng, cfg.bias);
    in = ct;
  }
}

Var TemporalConv::operator()(const Var& stack) const {
  if (stack.value().rank() != 4) throw Error("temporal_conv: expected [N,H,W,B]");
  if (stack.dim(0) < 2) throw Error("temporal_conv: temporal kernel needs >=2 frames");
  if (stack.dim(1) % 4 || stack.dim(2) % 4) throw Error("temporal_conv: H and W must be multiples of 4");
  Var x = stack;
  for (int i = 0; i < 3; ++i) {
    const Block& b = blocks_[i];
    if (x.dim(0) < 2) x = pad_frame(x);
    x = conv3d(x, b.k3);
    if (bias_) x = add_bias(x, b.b3);
    x = relu(x);
    if (i == 2) x = mean_axis0(x);
    x = relu(b.conv(x));
    if (i < 2) x = avg_pool(x, 2);
  }
  return x;
}

nn::ParamList TemporalConv::params() const {
  nn::ParamList p;
  for (int i = 0; i < 3; ++i) {
    const std::string pre = "block" + std::to_string(i + 1);
    p.add(pre + "/k3", blocks_[i].k3);
    if (bias_) p.add(pre + "/b3", blocks_[i].b3);
    p.append(pre + "/conv", blocks_[i].conv.params());
  }
  return p;
}

NdArray pool_flow(const NdArray& u, std::size_t factor) {
  NdArray pooled = avg_pool(constant(u), factor).value();
  pooled *= 1.0 / static_cast<double>(factor);
  return pooled;
}

Var spectral_product(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().rank() != 3) {
    throw Error("spectral_product: operands must be equal [H,W,C] shapes");
  }
  const std::size_t H = a.dim(0), W = a.dim(1);
  const Var prod = complex_mul(rfft2(a), rfft2(b));
  return scale(irfft2(prod, W), 1.0 / static_cast<double>(H * W));
}

Cfe::Cfe(const MetConfig& cfg, Rng& rng) : channels_(cfg.channels), offset_scale_(cfg.offset_scale) {
  const std::size_t C = cfg.channels, Ct = cfg.temporal_channels, Hd = cfg.hidden;
  lift_ = nn::Mlp(2, Hd, C, rng, cfg.bias);
  offsets_ = nn::Mlp(Ct, Hd, 18, rng, cfg.bias);
  masks_ = nn::Mlp(Ct, Hd, 9, rng, cfg.bias);
  deform_k_ = parameter(randn({3, 3, C, C}, rng, std::sqrt(2.0 / static_cast<double>(9 * C))));
  out_ = nn::Mlp(C, Hd, C, rng, cfg.bias);
}

Var Cfe::operator()(const Var& flow, const Var& h) const {
  if (flow.value().rank() != 3 || flow.dim(2) != 2) throw Error("cfe: flow must be [h,w,2]");
  if (h.value().rank() != 3 || flow.dim(0) != h.dim(0) || flow.dim(1) != h.dim(1)) {
    throw Error("cfe: flow grid " + shape_str(flow.shape()) + " does not match temporal features " +
                shape_str(h.shape()));
  }
  const Var f = lift_(flow);
  const Var off = scale(tanh(offsets_(h)), offset_scale_);
  const Var mask = sigmoid(masks_(h));
  const Var conv = deformable_conv2d(f, deform_k_, off, mask);
  return add(out_(spectral_product(f, conv)), f);
}

nn::ParamList Cfe::params() const {
  nn::ParamList p;
  p.append("lift", lift_.params());
  p.append("offsets", offsets_.params());
  p.append("masks", masks_.params());
  p.add("deform/k", deform_k_);
  p.append("out", out_.params());
  return p;
}

MetPair build_bidirectional_met(const TemporalConv& tconv, const Cfe& cfe,
                                const EventTensorStack& stack, const FlowPair& flows) {
  if (flows.forward.u.shape() != flows.backward.u.shape()) {
    throw Error("build_bidirectional_met: forward and backward flows differ in shape");
  }
  const Var hf = tconv(stack);
  const Var hb = tconv(reverse_frames(stack));
  const std::size_t factor = stack.data.dim(1) / hf.dim(0);
  const Var of = constant(pool_flow(flows.forward.u, factor));
  const Var ob = constant(pool_flow(flows.backward.u, factor));
  return {cfe(of, hf), cfe(ob, hb)};
}

}  // namespace evreg
