#include "evreg/registration/brm.hpp"

#include <cmath>

namespace evreg {

using namespace ops;

namespace {

void require_grid(const Var& a, const Var& b, const char* what) {
  if (a.value().rank() != 3 || a.shape() != b.shape()) {
    throw Error(std::string(what) + ": expected equal [h,w,C] grids, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  }
}

// Real gate on the channel-concatenated spectrum.
Var gate_spectrum(const Var& spectrum, const Var& gate) { return mul(spectrum, gate); }

Var spatial_from_mix(const Var& mix, const Var& fi, const nn::Conv2d& conv, const nn::Mlp& img,
                     const std::optional<double>& forced, BrmTrace* trace) {
  const std::size_t H = fi.dim(0), W = fi.dim(1);
  // Orthonormal scaling keeps the mask logits independent of the grid size;
  // the unscaled DC term alone would saturate the sigmoid.
  const Var spec = scale(rfft2(mix), 1.0 / std::sqrt(static_cast<double>(H * W)));
  const Var a_s = forced ? constant(NdArray(spec.shape(), *forced)) : sigmoid(relu(conv(spec)));
  if (trace) trace->spatial_mask = a_s.value();
  const Var fs = irfft2(gate_spectrum(rfft2(img(fi)), a_s), W);
  if (trace) trace->fs = fs.value();
  return fs;
}

Var channel_from_mix(const Var& fs, const Var& mix, const std::optional<double>& forced, BrmTrace* trace) {
  const std::size_t C = fs.dim(2), W = fs.dim(1);
  const Var a_c = forced ? constant(NdArray({1, 1, C}, *forced)) : sigmoid(relu(global_avg_pool(add(fs, mix))));
  if (trace) trace->channel_mask = a_c.value();
  // The same scalar scales the real and imaginary block of its channel.
  const Var fc = irfft2(mul_channels(rfft2(fs), concat_channels({a_c, a_c})), W);
  if (trace) trace->fc = fc.value();
  return fc;
}

}  // namespace

Var cross_attention(const Var& q_src, const Var& kv_src, const Var& wq, const Var& wk, const Var& wv,
                    NdArray* weights) {
  if (q_src.value().rank() != 2 || kv_src.value().rank() != 2) throw Error("cross_attention: expected [T,C] tokens");
  const Var q = matmul(q_src, wq), k = matmul(kv_src, wk), v = matmul(kv_src, wv);
  const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const Var att = softmax(scale(matmul(q, transpose(k)), s), 1);
  if (weights) *weights = att.value();
  return matmul(att, v);
}

Brm::Brm(const BrmConfig& cfg, Rng& rng) : channels_(cfg.channels), max_tokens_(cfg.max_tokens) {
  const std::size_t C = cfg.channels;
  mix_ = nn::Mlp(2 * C, cfg.hidden, C, rng, cfg.bias);
  img_ = nn::Mlp(C, cfg.hidden, C, rng, cfg.bias);
  spec_conv_ = nn::Conv2d(2 * C, 2 * C, 3, 1, rng, cfg.bias);
  wq_ = nn::Linear(C, C, rng, false);
  wk_ = nn::Linear(C, C, rng, false);
  wv_ = nn::Linear(C, C, rng, false);
}

Var Brm::mix(const Var& m, const Var& fi) const { return mix_(concat_channels({m, fi})); }

Var Brm::spatial_attention(const Var& m, const Var& fi, BrmTrace* trace) const {
  require_grid(m, fi, "spatial_attention");
  return spatial_from_mix(mix(m, fi), fi, spec_conv_, img_, force_spatial_, trace);
}

Var Brm::channel_attention(const Var& fs, const Var& m, const Var& fi, BrmTrace* trace) const {
  require_grid(m, fi, "channel_attention");
  require_grid(fs, fi, "channel_attention");
  return channel_from_mix(fs, mix(m, fi), force_channel_, trace);
}

Var Brm::register_one(const Var& m, const Var& fi, BrmTrace* trace) const {
  require_grid(m, fi, "brm_register");
  const std::size_t h = fi.dim(0), w = fi.dim(1), C = fi.dim(2);
  if (h * w > max_tokens_) {
    throw Error("brm_register: " + std::to_string(h * w) + " tokens exceed the limit of " +
                std::to_string(max_tokens_) + "; use a smaller feature grid");
  }
  const Var mx = mix(m, fi);
  const Var fs = spatial_from_mix(mx, fi, spec_conv_, img_, force_spatial_, trace);
  const Var fc = channel_from_mix(fs, mx, force_channel_, trace);
  const Var out = cross_attention(reshape(fi, {h * w, C}), reshape(fc, {h * w, C}), wq_.weight(), wk_.weight(),
                                  wv_.weight(), trace ? &trace->attention : nullptr);
  return reshape(out, {h, w, C});
}

std::pair<Var, Var> Brm::operator()(const Var& m_f, const Var& m_b, const Var& fi) const {
  return {register_one(m_f, fi), register_one(m_b, fi)};
}

nn::ParamList Brm::params() const {
  nn::ParamList p;
  p.append("mix", mix_.params());
  p.append("img", img_.params());
  p.append("spec_conv", spec_conv_.params());
  p.append("wq", wq_.params());
  p.append("wk", wk_.params());
  p.append("wv", wv_.params());
  return p;
}

}  // namespace evreg
