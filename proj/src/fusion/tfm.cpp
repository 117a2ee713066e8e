#include "evreg/fusion/tfm.hpp"

#include <cmath>

namespace evreg {

using namespace ops;

namespace {

void copy_linear(nn::Linear& dst, const nn::Linear& src) {
  dst.weight().mutable_value() = src.weight().value();
  if (src.bias().defined()) dst.bias().mutable_value() = src.bias().value();
}

void copy_mlp(nn::Mlp& dst, const nn::Mlp& src) {
  copy_linear(dst.first(), src.first());
  copy_linear(dst.second(), src.second());
}

}  // namespace

Tfm::Tfm(const TfmConfig& cfg, Rng& rng) : channels_(cfg.channels), max_offset_(cfg.max_offset), bias_(cfg.bias) {
  const std::size_t C = cfg.channels, Hd = cfg.hidden;
  f1_ = nn::Mlp(C, Hd, 18, rng, cfg.bias);
  f2_ = nn::Mlp(C, Hd, 9, rng, cfg.bias);
  f3_ = nn::Mlp(C, Hd, 18, rng, cfg.bias);
  f4_ = nn::Mlp(C, Hd, 9, rng, cfg.bias);
  gate_ = nn::Mlp(C, Hd, C, rng, cfg.bias);
  dc_k_ = parameter(randn({3, 3, C, C}, rng, std::sqrt(2.0 / static_cast<double>(9 * C))));
  dw_k_ = parameter(randn({3, 3, 3 * C}, rng, std::sqrt(2.0 / 9.0)));
  if (cfg.bias) dw_b_ = parameter(NdArray({3 * C}));
  pw_ = nn::Linear(3 * C, C, rng, cfg.bias);
}

Var Tfm::operator()(const Var& fr_f, const Var& fr_b, const Var& fi, TfmTrace* trace) const {
  if (fi.value().rank() != 3 || fr_f.shape() != fi.shape() || fr_b.shape() != fi.shape()) {
    throw Error("tfm_fuse: registered features " + shape_str(fr_f.shape()) + " / " + shape_str(fr_b.shape()) +
                " do not match image features " + shape_str(fi.shape()));
  }
  if (fi.dim(2) != channels_) throw Error("tfm_fuse: channel count does not match the module");
  const auto align = [&](const Var& fr, const nn::Mlp& fo, const nn::Mlp& fm) {
    return deformable_conv2d(fi, dc_k_, scale(tanh(fo(fr)), max_offset_), sigmoid(fm(fr)));
  };
  const Var af = align(fr_f, f1_, f2_);
  const Var ab = align(fr_b, f3_, f4_);
  const Var g = gate_(fi);
  const Var stacked = concat_channels({mul(af, g), mul(ab, g), g});
  if (trace) *trace = {af.value(), ab.value(), stacked.value()};
  Var d = depthwise_conv2d(stacked, dw_k_);
  if (bias_) d = add_bias(d, dw_b_);
  return add(pw_(d), fi);
}

void Tfm::tie_directions() {
  copy_mlp(f3_, f1_);
  copy_mlp(f4_, f2_);
  const std::size_t C = channels_;
  NdArray& k = dw_k_.mutable_value();
  for (std::size_t t = 0; t < 9; ++t) {
    for (std::size_t c = 0; c < C; ++c) k[t * 3 * C + C + c] = k[t * 3 * C + c];
  }
  if (bias_) {
    NdArray& b = dw_b_.mutable_value();
    for (std::size_t c = 0; c < C; ++c) b[C + c] = b[c];
  }
  NdArray& w = pw_.weight().mutable_value();  // [3C, C]
  for (std::size_t r = 0; r < C; ++r) {
    for (std::size_t o = 0; o < C; ++o) w[(C + r) * C + o] = w[r * C + o];
  }
}

nn::ParamList Tfm::params() const {
  nn::ParamList p;
  p.append("f1", f1_.params());
  p.append("f2", f2_.params());
  p.append("f3", f3_.params());
  p.append("f4", f4_.params());
  p.append("gate", gate_.params());
  p.add("dc/k", dc_k_);
  p.add("dw/k", dw_k_);
  if (bias_) p.add("dw/b", dw_b_);
  p.append("pw", pw_.params());
  return p;
}

}  // namespace evreg
