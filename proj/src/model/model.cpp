#include "evreg/model/model.hpp"

#include <sstream>

namespace evreg {

using namespace ops;

namespace {

struct VariantName {
  Variant v;
  const char* id;
};

constexpr VariantName kVariants[] = {
    {Variant::RgbOnly, "rgb_only"},
    {Variant::ConcatVoxel, "concat_voxel"},
    {Variant::ConcatMet, "concat_met"},
    {Variant::ConcatFlow, "concat_flow"},
    {Variant::ConcatTemporal, "concat_temporal"},
    {Variant::FullMinusBidir, "full_minus_bidir"},
    {Variant::FullMinusBrm, "full_minus_brm"},
    {Variant::FullMinusTfm, "full_minus_tfm"},
    {Variant::Full, "full"},
};

bool uses_met(Variant v) {
  return v == Variant::ConcatMet || v == Variant::FullMinusBidir || v == Variant::FullMinusBrm ||
         v == Variant::FullMinusTfm || v == Variant::Full;
}

bool uses_tfm(Variant v) {
  return v == Variant::FullMinusBidir || v == Variant::FullMinusBrm || v == Variant::Full;
}

bool uses_brm(Variant v) {
  return v == Variant::FullMinusBidir || v == Variant::FullMinusTfm || v == Variant::Full;
}

template <typename T>
std::string fmt(T v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <typename T>
void get(const KeyValues& kv, const std::string& key, T& out) {
  const auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream in(it->second);
  T v{};
  if (!(in >> v) || !(in >> std::ws).eof()) throw Error("model config: bad value for " + key + ": " + it->second);
  out = v;
}

}  // namespace

Variant parse_variant(const std::string& id) {
  std::string known;
  for (const auto& [v, name] : kVariants) {
    if (id == name) return v;
    known += known.empty() ? name : std::string(", ") + name;
  }
  throw Error("unknown variant '" + id + "' (expected one of " + known + ")");
}

std::string variant_name(Variant v) {
  for (const auto& [x, name] : kVariants) {
    if (x == v) return name;
  }
  throw Error("variant_name: invalid enum value");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> out;
    for (const auto& e : kVariants) out.push_back(e.v);
    return out;
  }();
  return all;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw Error("model config: num_classes must be >= 2");
  if (!(ohem_keep_fraction > 0.0 && ohem_keep_fraction <= 1.0)) {
    throw Error("model config: ohem_keep_fraction must lie in (0,1]");
  }
  if (c_in == 0 || channels == 0 || temporal_channels == 0 || hidden == 0 || batch == 0) {
    throw Error("model config: widths and batch must be positive");
  }
  if (event_frames < 2) throw Error("model config: event_frames must be >= 2");
  if (event_bins == 0 || voxel_bins == 0) throw Error("model config: bins must be positive");
  if (!(lr0 >= 0.0) || !(flow_eps >= 0.0) || !(poly_power >= 0.0) || !(weight_decay >= 0.0)) {
    throw Error("model config: lr0, flow_eps, poly_power and weight_decay must be >= 0");
  }
}

KeyValues ModelConfig::to_key_values() const {
  return {{"c_in", fmt(c_in)},
          {"channels", fmt(channels)},
          {"temporal_channels", fmt(temporal_channels)},
          {"hidden", fmt(hidden)},
          {"num_classes", fmt(num_classes)},
          {"variant", variant_name(variant)},
          {"seed", fmt(seed)},
          {"lr0", fmt(lr0)},
          {"total_iters", fmt(total_iters)},
          {"ohem_keep_fraction", fmt(ohem_keep_fraction)},
          {"poly_power", fmt(poly_power)},
          {"weight_decay", fmt(weight_decay)},
          {"batch", fmt(batch)},
          {"event_frames", fmt(event_frames)},
          {"event_bins", fmt(event_bins)},
          {"voxel_bins", fmt(voxel_bins)},
          {"flow_eps", fmt(flow_eps)}};
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  const KeyValues known = c.to_key_values();
  for (const auto& [k, v] : kv) {
    if (!known.contains(k)) throw Error("model config: unknown key " + k);
  }
  get(kv, "c_in", c.c_in);
  get(kv, "channels", c.channels);
  get(kv, "temporal_channels", c.temporal_channels);
  get(kv, "hidden", c.hidden);
  get(kv, "num_classes", c.num_classes);
  if (const auto it = kv.find("variant"); it != kv.end()) c.variant = parse_variant(it->second);
  get(kv, "seed", c.seed);
  get(kv, "lr0", c.lr0);
  get(kv, "total_iters", c.total_iters);
  get(kv, "ohem_keep_fraction", c.ohem_keep_fraction);
  get(kv, "poly_power", c.poly_power);
  get(kv, "weight_decay", c.weight_decay);
  get(kv, "batch", c.batch);
  get(kv, "event_frames", c.event_frames);
  get(kv, "event_bins", c.event_bins);
  get(kv, "voxel_bins", c.voxel_bins);
  get(kv, "flow_eps", c.flow_eps);
  c.validate();
  return c;
}

ModelInput prepare_input(const SceneSample& sample, const ModelConfig& cfg, std::uint64_t flow_seed) {
  if (sample.frame.rank() != 2) throw Error("prepare_input: frame must be [H,W]");
  const std::size_t H = sample.frame.dim(0), W = sample.frame.dim(1);
  ModelInput in;
  in.rgb = NdArray({H, W, cfg.c_in});
  for (std::size_t p = 0; p < H * W; ++p) {
    for (std::size_t c = 0; c < cfg.c_in; ++c) in.rgb[p * cfg.c_in + c] = sample.frame[p] / 255.0;
  }
  in.events = make_event_stack(sample.events, sample.t_prev, sample.t_k, cfg.event_frames, cfg.event_bins);
  in.voxel = build_voxel_grid(sample.events, sample.t_prev, sample.t_k, cfg.voxel_bins);
  in.flows = provide_flow_gt_noisy(sample, cfg.flow_eps, flow_seed);
  in.mask = sample.mask;
  return in;
}

NdArray argmax_classes(const NdArray& logits) {
  if (logits.rank() != 3) throw Error("argmax_classes: expected [H,W,K] logits");
  const std::size_t H = logits.dim(0), W = logits.dim(1), K = logits.dim(2);
  NdArray out({H, W});
  for (std::size_t p = 0; p < H * W; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (logits[p * K + k] > logits[p * K + best]) best = k;
    }
    out[p] = static_cast<double>(best);
  }
  return out;
}

Encoder::Encoder(std::size_t c_in, std::size_t channels, Rng& rng)
    : c1_(c_in, channels, 3, 1, rng), c2_(channels, channels, 3, 2, rng), c3_(channels, channels, 3, 2, rng) {}

Var Encoder::operator()(const Var& x) const { return relu(c3_(relu(c2_(relu(c1_(x)))))); }

nn::ParamList Encoder::params() const {
  nn::ParamList p;
  p.append("c1", c1_.params());
  p.append("c2", c2_.params());
  p.append("c3", c3_.params());
  return p;
}

BrenetModel::BrenetModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg.seed);
  const std::size_t C = cfg.channels, Ct = cfg.temporal_channels;
  encoder_ = Encoder(cfg.c_in, C, rng);
  decoder_ = nn::Mlp(C, cfg.hidden, cfg.num_classes, rng);
  const Variant v = cfg.variant;
  if (uses_met(v) || v == Variant::ConcatTemporal) {
    MetConfig mc;
    mc.bins = cfg.event_bins;
    mc.temporal_channels = Ct;
    mc.channels = C;
    mc.hidden = cfg.hidden;
    tconv_ = TemporalConv(mc, rng);
    if (uses_met(v)) cfe_ = Cfe(mc, rng);
  }
  if (uses_brm(v)) brm_ = Brm(BrmConfig{.channels = C, .hidden = cfg.hidden, .max_tokens = 4096, .bias = true}, rng);
  if (uses_tfm(v)) tfm_ = Tfm(TfmConfig{.channels = C, .hidden = cfg.hidden, .max_offset = 4.0, .bias = true}, rng);
  switch (v) {
    case Variant::ConcatVoxel:
      voxel_encoder_ = Encoder(cfg.voxel_bins, Ct, rng);
      fuse_ = nn::Linear(C + Ct, C, rng);
      break;
    case Variant::ConcatMet:
      fuse_ = nn::Linear(3 * C, C, rng);
      break;
    case Variant::ConcatFlow:
      fuse_ = nn::Linear(C + 2, C, rng);
      break;
    case Variant::ConcatTemporal:
      fuse_ = nn::Linear(C + Ct, C, rng);
      break;
    case Variant::FullMinusBrm:
      brm_sub_ = nn::Linear(2 * C, C, rng);
      break;
    case Variant::FullMinusTfm:
      fuse_ = nn::Linear(3 * C, C, rng);
      break;
    default:
      break;
  }
  nn::snap_to_float(params());
}

const FlowField& BrenetModel::backward_flow(const ModelInput& in) const {
  backward_reads_->fetch_add(1);
  return in.flows.backward;
}

Var BrenetModel::concat_fuse(const std::vector<Var>& parts) const {
  return add(parts.back(), fuse_(concat_channels(parts)));
}

Var BrenetModel::logits(const ModelInput& in, ModelTrace* trace) const {
  return logits(constant(in.rgb), in, trace);
}

Var BrenetModel::logits(const Var& rgb, const ModelInput& in, ModelTrace* trace) const {
  if (rgb.value().rank() != 3 || rgb.dim(2) != cfg_.c_in) {
    throw Error("model: rgb must be [H,W," + std::to_string(cfg_.c_in) + "], got " + shape_str(rgb.shape()));
  }
  const std::size_t H = rgb.dim(0), W = rgb.dim(1);
  if (H % 4 != 0 || W % 4 != 0) throw Error("model: H and W must be multiples of 4");
  const Var fi = encoder_(rgb);
  const std::size_t factor = 4;
  const Variant v = cfg_.variant;

  const auto pooled = [&](const FlowField& f) {
    if (f.height() != H || f.width() != W) throw Error("model: flow grid does not match the frame");
    return constant(pool_flow(f.u, factor));
  };
  MetPair met;
  if (v == Variant::FullMinusBidir) {
    met.forward = cfe_(pooled(in.flows.forward), tconv_(in.events));
  } else if (uses_met(v)) {
    met = build_bidirectional_met(tconv_, cfe_, in.events, FlowPair{in.flows.forward, backward_flow(in)});
  }

  Var rep, fused;
  switch (v) {
    case Variant::RgbOnly:
      fused = fi;
      break;
    case Variant::ConcatVoxel:
      rep = voxel_encoder_(constant(in.voxel));
      fused = concat_fuse({rep, fi});
      break;
    case Variant::ConcatMet:
      rep = concat_channels({met.forward, met.backward});
      fused = concat_fuse({met.forward, met.backward, fi});
      break;
    case Variant::ConcatFlow:
      rep = pooled(in.flows.forward);
      fused = concat_fuse({rep, fi});
      break;
    case Variant::ConcatTemporal:
      rep = tconv_(in.events);
      fused = concat_fuse({rep, fi});
      break;
    case Variant::FullMinusBidir: {
      // Without a backward branch both TFM inputs carry the forward registration.
      const Var fr = brm_.register_one(met.forward, fi);
      fused = tfm_(fr, fr, fi);
      break;
    }
    case Variant::FullMinusBrm: {
      const Var fr_f = add(fi, brm_sub_(concat_channels({met.forward, fi})));
      const Var fr_b = add(fi, brm_sub_(concat_channels({met.backward, fi})));
      fused = tfm_(fr_f, fr_b, fi);
      break;
    }
    case Variant::FullMinusTfm: {
      const auto [fr_f, fr_b] = brm_(met.forward, met.backward, fi);
      fused = concat_fuse({fr_f, fr_b, fi});
      break;
    }
    case Variant::Full: {
      const auto [fr_f, fr_b] = brm_(met.forward, met.backward, fi);
      fused = tfm_(fr_f, fr_b, fi);
      break;
    }
  }
  if (trace) {
    trace->f_i = fi.value();
    trace->m_f = met.forward.defined() ? met.forward.value() : NdArray();
    trace->m_b = met.backward.defined() ? met.backward.value() : NdArray();
    trace->representation = rep.defined() ? rep.value() : NdArray();
    trace->fused = fused.value();
  }
  return upsample_bilinear(decoder_(fused), factor);
}

SegmentationOutput BrenetModel::forward(const ModelInput& in, ModelTrace* trace) const {
  NoGradGuard no_grad;
  SegmentationOutput out;
  out.logits = logits(in, trace).value();
  out.mask = argmax_classes(out.logits);
  return out;
}

nn::ParamList BrenetModel::params() const {
  nn::ParamList p;
  p.append("encoder", encoder_.params());
  p.append("decoder", decoder_.params());
  p.append("tconv", tconv_.params());
  p.append("cfe", cfe_.params());
  p.append("brm", brm_.params());
  p.append("tfm", tfm_.params());
  p.append("voxel_encoder", voxel_encoder_.params());
  p.append("fuse", fuse_.params());
  p.append("brm_sub", brm_sub_.params());
  return p;
}

BrenetModel variant_factory(const std::string& id, ModelConfig cfg) {
  cfg.variant = parse_variant(id);
  return BrenetModel(cfg);
}

}  // namespace evreg
