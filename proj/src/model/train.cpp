#include "evreg/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "evreg/events/formats.hpp"
#include "evreg/tensor/parallel.hpp"

namespace evreg {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& context) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(context + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& context) {
  const std::uint32_t n = get_u32(in, context);
  if (n > (1u << 24)) throw Error(context + ": implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw Error(context + ": truncated");
  return s;
}

std::size_t pixel_rows(const Shape& s) {
  if (s.empty()) throw Error("ohem_cross_entropy: logits must have a class axis");
  return shape_size(s) / s.back();
}

}  // namespace

Var ohem_cross_entropy(const Var& logits, const NdArray& target, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw Error("ohem_cross_entropy: keep_fraction must lie in (0,1]");
  }
  const Shape& shape = logits.shape();
  if (shape.size() < 2) throw Error("ohem_cross_entropy: logits must be [..., K]");
  const std::size_t K = shape.back(), P = pixel_rows(shape);
  if (target.size() != P) {
    throw Error("ohem_cross_entropy: target " + shape_str(target.shape()) + " does not match logits " +
                shape_str(shape));
  }
  const NdArray& z = logits.value();
  NdArray prob({P, K});
  std::vector<double> ce(P, 0.0);
  std::vector<std::size_t> valid;
  for (std::size_t p = 0; p < P; ++p) {
    const double t = target[p];
    if (!(t >= 0.0) || t >= static_cast<double>(K) || t != std::floor(t)) continue;
    const double* zp = z.data() + p * K;
    const double mx = *std::max_element(zp, zp + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(zp[k] - mx);
    for (std::size_t k = 0; k < K; ++k) prob[p * K + k] = std::exp(zp[k] - mx) / s;
    ce[p] = mx + std::log(s) - zp[static_cast<std::size_t>(t)];
    valid.push_back(p);
  }
  if (valid.empty()) throw Error("ohem_cross_entropy: no valid pixels");
  const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(valid.size()) - 1e-9));
  const std::size_t k = std::clamp<std::size_t>(keep, 1, valid.size());
  std::partial_sort(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(k), valid.end(),
                    [&](std::size_t a, std::size_t b) { return ce[a] != ce[b] ? ce[a] > ce[b] : a < b; });
  valid.resize(k);
  std::sort(valid.begin(), valid.end());
  double loss = 0.0;
  for (std::size_t p : valid) loss += ce[p];
  loss /= static_cast<double>(k);
  return record(NdArray({1}, loss), {logits}, [valid, prob = std::move(prob), target, K, k](Node& self) {
    NdArray& g = self.inputs[0]->grad_buffer();
    const double up = self.grad[0] / static_cast<double>(k);
    for (std::size_t p : valid) {
      const auto t = static_cast<std::size_t>(target[p]);
      for (std::size_t c = 0; c < K; ++c) g[p * K + c] += up * (prob[p * K + c] - (c == t ? 1.0 : 0.0));
    }
  });
}

double poly_lr(double lr0, std::size_t t, std::size_t total, double power) {
  if (t >= total) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

AdamWConfig adamw_config(const ModelConfig& cfg) {
  AdamWConfig a;
  a.lr0 = cfg.lr0;
  a.total_iters = cfg.total_iters;
  a.poly_power = cfg.poly_power;
  a.weight_decay = cfg.weight_decay;
  return a;
}

AdamW::AdamW(nn::ParamList params, const AdamWConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

double AdamW::step(std::size_t t) {
  if (t < 1) throw Error("optimizer_step: t must be >= 1");
  for (const auto& p : params_) {
    if (p.var.has_grad() && !p.var.grad().all_finite()) {
      throw Error("optimizer_step: non-finite gradient in parameter " + p.name);
    }
  }
  const double lr = poly_lr(cfg_.lr0, t, cfg_.total_iters, cfg_.poly_power);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var v = params_.items()[i].var;
    const NdArray g = v.grad();
    NdArray& x = v.mutable_value();
    NdArray& m = m_[i];
    NdArray& s = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      s[j] = cfg_.beta2 * s[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1, shat = s[j] / bc2;
      x[j] -= lr * (mhat / (std::sqrt(shat) + cfg_.eps) + cfg_.weight_decay * x[j]);
    }
  }
  return lr;
}

void AdamW::zero_grad() {
  for (const auto& p : params_) {
    Var v = p.var;
    v.zero_grad();
  }
}

TrainLog train_model(BrenetModel& model, const std::vector<ModelInput>& train, const std::vector<ModelInput>& val,
                     const TrainOptions& opts) {
  const ModelConfig& cfg = model.config();
  if (train.empty() && cfg.total_iters > 0) throw Error("train: empty training split");
  const nn::ParamList params = model.params();
  AdamW opt(params, adamw_config(cfg));
  Rng rng(mix64(cfg.seed ^ 0x7261696eULL));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  TrainLog log;
  for (std::size_t it = 1; it <= cfg.total_iters; ++it) {
    opt.zero_grad();
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const ModelInput& in = train[order[cursor++]];
      const Var l = ohem_cross_entropy(model.logits(in), in.mask, cfg.ohem_keep_fraction);
      const double lv = l.value()[0];
      if (!std::isfinite(lv)) throw Error("train: non-finite loss at iteration " + std::to_string(it));
      loss += lv / static_cast<double>(cfg.batch);
      backward(ops::scale(l, 1.0 / static_cast<double>(cfg.batch)));
    }
    log.loss.push_back(loss);
    log.lr.push_back(opt.step(it));
    nn::snap_to_float(params);
    if (!val.empty() && opts.eval_every > 0 && it % opts.eval_every == 0 && it != cfg.total_iters) {
      log.miou.emplace_back(it, evaluate(model, val).miou);
    }
    if (opts.progress) opts.progress(it, loss);
  }
  if (!val.empty()) log.miou.emplace_back(cfg.total_iters, evaluate(model, val).miou);
  return log;
}

std::vector<SegmentationOutput> predict(const BrenetModel& model, const std::vector<ModelInput>& inputs) {
  std::vector<SegmentationOutput> out(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { out[i] = model.forward(inputs[i]); });
  return out;
}

SegmentationScore evaluate(const BrenetModel& model, const std::vector<ModelInput>& inputs) {
  const std::vector<SegmentationOutput> out = predict(model, inputs);
  ConfusionMatrix cm(model.config().num_classes);
  for (std::size_t i = 0; i < inputs.size(); ++i) cm.add(out[i].mask, inputs[i].mask);
  return {cm.miou(), cm.accuracy()};
}

ModelInput prepare_entry(const Manifest& m, std::size_t i, const ModelConfig& cfg) {
  const ManifestEntry& e = m.entries.at(i);
  return prepare_input(load_sample(m, i), cfg, mix64(e.scene * 1000003ULL + e.index));
}

DataSplit load_split(const Manifest& m, const ModelConfig& cfg, std::size_t val_scenes) {
  std::size_t scenes = 0;
  for (const auto& e : m.entries) scenes = std::max(scenes, e.scene + 1);
  const std::size_t first_val = scenes > val_scenes ? scenes - val_scenes : 0;
  DataSplit split;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    (m.entries[i].scene >= first_val ? split.val : split.train).push_back(prepare_entry(m, i, cfg));
  }
  return split;
}

void write_metrics_csv(const TrainLog& log, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const bool with_miou = !log.miou.empty();
  out << (with_miou ? "iter,loss,lr,miou\n" : "iter,loss,lr\n");
  out.precision(17);
  std::size_t next = 0;
  for (std::size_t i = 0; i < log.loss.size(); ++i) {
    out << i + 1 << ',' << log.loss[i] << ',' << log.lr[i];
    if (with_miou) {
      out << ',';
      if (next < log.miou.size() && log.miou[next].first == i + 1) out << log.miou[next++].second;
    }
    out << '\n';
  }
  // An evaluation without iterations (total_iters = 0) gets its own row.
  if (with_miou && log.loss.empty()) out << "0,,," << log.miou.front().second << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

void save_checkpoint(const BrenetModel& model, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write("BRN1", 4);
  put_u32(out, 1);
  std::ostringstream cfg;
  for (const auto& [k, v] : model.config().to_key_values()) cfg << k << '=' << v << '\n';
  put_string(out, cfg.str());
  const nn::ParamList params = model.params();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_string(out, p.name);
    const Shape& s = p.var.shape();
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    for (std::size_t d : s) put_u32(out, static_cast<std::uint32_t>(d));
    write_flt1(out, p.var.value());
  }
  if (!out) throw Error("write failed: " + path.string());
}

BrenetModel load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string ctx = path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "BRN1", 4) != 0) throw Error(ctx + ": bad magic (expected BRN1)");
  if (const std::uint32_t version = get_u32(in, ctx); version != 1) {
    throw Error(ctx + ": unsupported checkpoint version " + std::to_string(version));
  }
  BrenetModel model(ModelConfig::from_key_values(parse_key_values(get_string(in, ctx), ctx)));
  const nn::ParamList params = model.params();
  const std::uint32_t count = get_u32(in, ctx);
  if (count != params.size()) {
    throw Error(ctx + ": " + std::to_string(count) + " parameters stored, model has " +
                std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const std::string name = get_string(in, ctx);
    if (name != p.name) throw Error(ctx + ": expected parameter " + p.name + ", found " + name);
    Shape s(get_u32(in, ctx));
    for (auto& d : s) d = get_u32(in, ctx);
    if (s != p.var.shape()) {
      throw Error(ctx + ": parameter " + name + " has shape " + shape_str(s) + ", model expects " +
                  shape_str(p.var.shape()));
    }
    const NdArray blob = read_flt1(in, ctx + ":" + name);
    if (blob.size() != shape_size(s)) throw Error(ctx + ": parameter " + name + " payload size mismatch");
    Var v = p.var;
    v.mutable_value() = blob.reshaped(s);
  }
  return model;
}

TrainRunResult train_run(const fs::path& manifest, const ModelConfig& cfg, const fs::path& out_dir,
                         std::size_t val_scenes, const TrainOptions& opts) {
  const Manifest m = read_manifest(manifest);
  const DataSplit split = load_split(m, cfg, val_scenes);
  BrenetModel model(cfg);
  TrainRunResult r;
  r.log = train_model(model, split.train, split.val, opts);
  fs::create_directories(out_dir);
  r.checkpoint = out_dir / "checkpoint.brn";
  r.metrics = out_dir / "metrics.csv";
  save_checkpoint(model, r.checkpoint);
  write_metrics_csv(r.log, r.metrics);
  return r;
}

}  // namespace evreg
