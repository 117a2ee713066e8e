// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Criterion numbers given on the command line restrict the
// run; 4 and 6 reuse the checkpoints trained for 5.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evreg/analysis/ablation.hpp"
#include "evreg/analysis/cka.hpp"
#include "evreg/analysis/contraction.hpp"
#include "evreg/analysis/misalignment.hpp"
#include "evreg/flow/flow.hpp"
#include "evreg/fusion/tfm.hpp"
#include "evreg/met/met.hpp"
#include "evreg/model/train.hpp"
#include "evreg/registration/brm.hpp"
#include "evreg/synth/dataset.hpp"
#include "evreg/tensor/fft.hpp"
#include "evreg/tensor/gradcheck.hpp"
#include "evreg/tensor/ops.hpp"
#include "param_check.hpp"

namespace fs = std::filesystem;
using namespace evreg;
namespace o = evreg::ops;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects sub-checks of one criterion; the first failures are reported.
struct Verdict {
  bool ok = true;
  std::vector<std::string> failures;
  std::string summary;

  void check(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    failures.push_back(what);
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- brute-force oracles for criterion 1 ----

NdArray conv_loops(const NdArray& x, const NdArray& k, std::size_t stride, std::size_t pad) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const std::size_t Ci = x.dim(2), kh = k.dim(0), kw = k.dim(1), Co = k.dim(3);
  const std::size_t Ho = (x.dim(0) + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (x.dim(1) + 2 * pad - kw) / stride + 1;
  NdArray out({Ho, Wo, Co});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t co = 0; co < Co; ++co) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
            for (std::size_t ci = 0; ci < Ci; ++ci)
              s += x(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci) * k(ky, kx, ci, co);
          }
        out(oy, ox, co) = s;
      }
  return out;
}

// Modulated deformable 3x3 convolution by direct bilinear sampling, each
// corner outside the image reading zero.
NdArray deformable_loops(const NdArray& x, const NdArray& k, const NdArray& off, const NdArray& mask) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const std::size_t Ci = x.dim(2), Co = k.dim(3);
  auto at = [&](long r, long c, std::size_t ch) {
    return (r < 0 || c < 0 || r >= H || c >= W) ? 0.0 : x(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
  };
  NdArray out({x.dim(0), x.dim(1), Co});
  for (long y = 0; y < H; ++y)
    for (long xx = 0; xx < W; ++xx) {
      const std::size_t p = static_cast<std::size_t>(y * W + xx);
      for (std::size_t t = 0; t < 9; ++t) {
        const std::size_t ky = t / 3, kx = t % 3;
        const double sy = static_cast<double>(y) + static_cast<double>(ky) - 1.0 + off[p * 18 + 2 * t];
        const double sx = static_cast<double>(xx) + static_cast<double>(kx) - 1.0 + off[p * 18 + 2 * t + 1];
        const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
        const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const double v = (1 - fy) * ((1 - fx) * at(y0, x0, ci) + fx * at(y0, x0 + 1, ci)) +
                           fy * ((1 - fx) * at(y0 + 1, x0, ci) + fx * at(y0 + 1, x0 + 1, ci));
          for (std::size_t co = 0; co < Co; ++co)
            out(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), co) += mask[p * 9 + t] * v * k(ky, kx, ci, co);
        }
      }
    }
  return out;
}

ModelConfig tiny_model(Variant v) {
  ModelConfig c;
  c.channels = 4;
  c.temporal_channels = 4;
  c.hidden = 4;
  c.event_frames = 4;
  c.variant = v;
  return c;
}

// 16x16 input with a random frame, sparse events and random flows.
ModelInput crop_input(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t S = 16;
  ModelInput in;
  in.rgb = rand_uniform({S, S, cfg.c_in}, rng, 0.0, 1.0);
  in.events.data = NdArray({cfg.event_frames, S, S, cfg.event_bins});
  for (double& v : in.events.data.values()) {
    const double u = rand_uniform({1}, rng, 0.0, 1.0)[0];
    v = u < 0.05 ? 1.0 : (u < 0.1 ? -1.0 : 0.0);
  }
  for (std::size_t n = 0; n < cfg.event_frames; ++n) in.events.windows.emplace_back(n * 10, n * 10 + 10);
  in.voxel = randn({S, S, cfg.voxel_bins}, rng, 0.5);
  in.flows.forward = {randn({S, S, 2}, rng), 0, 100, FlowDirection::Forward};
  in.flows.backward = {randn({S, S, 2}, rng), 100, 0, FlowDirection::Backward};
  in.mask = NdArray({S, S});
  for (std::size_t p = 0; p < S * S; ++p) in.mask[p] = static_cast<double>(p % cfg.num_classes);
  return in;
}

Verdict kernels() {
  Verdict v;
  const auto t0 = Clock::now();
  double fft = 0, conv = 0, deform = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    for (auto [H, W] : {std::pair{8ul, 8ul}, {5ul, 7ul}, {6ul, 3ul}, {1ul, 1ul}, {16ul, 16ul}}) {
      const NdArray x = randn({H, W, 3}, rng);
      fft = std::max(fft, max_abs_diff(irfft2(rfft2(x), W), x));
    }
    for (std::size_t H : {1ul, 3ul, 5ul, 8ul}) {
      for (std::size_t stride : {1ul, 2ul}) {
        const NdArray x = randn({H, 8, 3}, rng), k = randn({3, 3, 3, 4}, rng);
        conv = std::max(conv, max_abs_diff(o::conv2d(constant(x), constant(k), stride, 1).value(),
                                           conv_loops(x, k, stride, 1)));
      }
    }
    const NdArray x = randn({8, 7, 3}, rng), k = randn({3, 3, 3, 4}, rng);
    deform = std::max(deform, max_abs_diff(o::deformable_conv2d(constant(x), constant(k), constant(NdArray({8, 7, 18})),
                                                                constant(NdArray({8, 7, 9}, 1.0)))
                                               .value(),
                                           conv_loops(x, k, 1, 1)));
    const NdArray off = rand_uniform({8, 7, 18}, rng, -2.5, 2.5), m = rand_uniform({8, 7, 9}, rng, 0.0, 1.0);
    deform = std::max(deform, max_abs_diff(o::deformable_conv2d(constant(x), constant(k), constant(off), constant(m)).value(),
                                           deformable_loops(x, k, off, m)));
  }
  v.check(fft < 1e-9, "fft roundtrip " + fmt("%.2e", fft));
  v.check(conv < 1e-12, "conv2d vs loops " + fmt("%.2e", conv));
  v.check(deform < 1e-12, "deformable vs loops " + fmt("%.2e", deform));

  double lin = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    lin = std::max(lin, grad_check([](const std::vector<Var>& in) { return o::matmul(in[0], in[1]); },
                                   {randn({4, 5}, rng), randn({5, 3}, rng)}, {.seed = seed, .wrt = {}}));
  }
  v.check(lin < 1e-7, "linear grad " + fmt("%.2e", lin));

  Rng rng(14);
  const NdArray x = randn({8, 8, 2}, rng), k = randn({3, 3, 2, 2}, rng);
  const NdArray off = rand_uniform({8, 8, 18}, rng, -2.0, 2.0), m = rand_uniform({8, 8, 9}, rng, 0.0, 1.0);
  const double dof = grad_check([](const std::vector<Var>& in) { return o::deformable_conv2d(in[0], in[1], in[2], in[3]); },
                                {x, k, off, m}, {.wrt = {2}});
  v.check(dof < 1e-3, "deformable offsets grad " + fmt("%.2e", dof));

  MetConfig mc;
  mc.bins = 2;
  mc.temporal_channels = 3;
  mc.channels = 4;
  mc.hidden = 5;
  {
    Rng r(5);
    const TemporalConv tc(mc, r);
    const Cfe cfe(mc, r);
    testing::randomize(tc.params(), 6);
    testing::randomize(cfe.params(), 7);
    Rng g(8);
    const NdArray stack = randn({3, 8, 8, 2}, g);
    const double et = grad_check([&](const std::vector<Var>& in) { return tc(in[0]); }, {stack},
                                 {.eps = 1e-5, .seed = 0, .max_entries = 60, .wrt = {}});
    v.check(et < 1e-4, "temporal conv grad " + fmt("%.2e", et));
    const NdArray flow = randn({8, 8, 2}, g), h = randn({8, 8, 3}, g);
    const double ec = std::max(grad_check([&](const std::vector<Var>& in) { return cfe(in[0], in[1]); }, {flow, h}),
                               testing::param_grad_check([&] { return cfe(constant(flow), constant(h)); }, cfe.params()));
    v.check(ec < 1e-4, "cfe grad " + fmt("%.2e", ec));
  }
  {
    Rng r(8);
    const Brm brm(BrmConfig{.channels = 4, .hidden = 6}, r);
    testing::randomize(brm.params(), 9);
    Rng g(10);
    const NdArray mm = randn({8, 8, 4}, g), fi = randn({8, 8, 4}, g);
    const double eb = grad_check([&](const std::vector<Var>& in) { return brm.register_one(in[0], in[1]); }, {mm, fi},
                                 {.eps = 1e-5, .seed = 0, .max_entries = 40, .wrt = {}});
    v.check(eb < 1e-3, "brm grad " + fmt("%.2e", eb));
    const NdArray q = randn({10, 4}, g), kv = randn({12, 4}, g);
    const double ea = grad_check(
        [](const std::vector<Var>& in) { return cross_attention(in[0], in[1], in[2], in[3], in[4]); },
        {q, kv, randn({4, 4}, g), randn({4, 4}, g), randn({4, 4}, g)});
    v.check(ea < 1e-6, "cross-attention grad " + fmt("%.2e", ea));
  }
  {
    Rng r(5);
    const Tfm tfm(TfmConfig{.channels = 3, .hidden = 5}, r);
    testing::randomize(tfm.params(), 13);
    Rng g(14);
    const NdArray a = randn({8, 8, 3}, g), b = randn({8, 8, 3}, g), fi = randn({8, 8, 3}, g);
    const double ef = grad_check([&](const std::vector<Var>& in) { return tfm(in[0], in[1], in[2]); }, {a, b, fi},
                                 {.eps = 1e-5, .seed = 0, .max_entries = 40, .wrt = {}});
    v.check(ef < 1e-3, "tfm grad " + fmt("%.2e", ef));
  }
  double em = 0;
  for (Variant var : {Variant::Full, Variant::RgbOnly, Variant::ConcatMet}) {
    const ModelConfig cfg = tiny_model(var);
    const BrenetModel model(cfg);
    const ModelInput in = crop_input(cfg, 3);
    em = std::max(em, grad_check(
                          [&](const std::vector<Var>& x) { return ohem_cross_entropy(model.logits(x[0], in), in.mask, 1.0); },
                          {in.rgb}, {.eps = 1e-6, .seed = 1, .max_entries = 24, .wrt = {}}));
  }
  v.check(em < 1e-3, "model grad " + fmt("%.2e", em));

  const double t = seconds_since(t0);
  v.check(t < 120.0, "runtime " + fmt("%.0f s", t));
  v.summary = "fft " + fmt("%.1e", fft) + ", conv " + fmt("%.1e", conv) + ", deformable " + fmt("%.1e", deform) +
              ", grads lin " + fmt("%.1e", lin) + " offsets " + fmt("%.1e", dof) + " model " + fmt("%.1e", em);
  return v;
}

// The standard suite: default recipe, 10 scenes.
DatasetSpec suite_spec() { return load_dataset_spec("default", {{"scenes", "10"}}); }

Verdict registration_vs_fusion() {
  Verdict v;
  const auto t0 = Clock::now();
  std::string s;
  for (double eps : {0.0, 0.5, 1.0}) {
    const MisalignmentReport r = measure_misalignment(suite_spec(), eps, 0);
    const std::vector<MisalignmentRow> scenes = scene_means(r);
    v.check(scenes.size() == 10, "expected 10 scenes");
    if (eps <= 0.5) {
      for (const MisalignmentRow& row : scenes)
        v.check(row.delta_reg < row.delta_fuse, "scene " + std::to_string(row.scene) + " eps " + fmt("%.1f", eps) +
                                                    ": reg " + fmt("%.3f", row.delta_reg) + " >= fuse " +
                                                    fmt("%.3f", row.delta_fuse));
    }
    if (eps == 0.0) v.check(r.delta_reg < 0.1, "delta_reg at eps 0 is " + fmt("%.3f", r.delta_reg));
    s += "eps " + fmt("%.1f", eps) + ": fuse " + fmt("%.3f", r.delta_fuse) + " reg " + fmt("%.3f", r.delta_reg) + "; ";
  }
  const double t = seconds_since(t0);
  v.check(t < 60.0, "runtime " + fmt("%.0f s", t));
  v.summary = s.substr(0, s.size() - 2);
  return v;
}

Verdict contraction() {
  Verdict v;
  const auto t0 = Clock::now();
  const std::vector<ContractionRow> rows = contraction_sweep(suite_spec(), 0);
  std::size_t linear = 0, lk = 0;
  for (const ContractionRow& r : rows) {
    const std::string id = r.refiner + " case " + std::to_string(r.case_id) + " J " + std::to_string(r.J);
    if (r.refiner == "linear") {
      ++linear;
      v.check(r.holds, id + " violates the bound");
    } else {
      ++lk;
      v.check(r.decreasing && r.errors.size() >= 4, id + " error not strictly decreasing");
    }
  }
  v.check(linear == 15, "expected 15 linear cases, got " + std::to_string(linear));
  v.check(lk >= 1, "no lk cases");
  // The linear refiner contracts at exactly its rate.
  Rng rng(3);
  const NdArray gt = randn({12, 12, 2}, rng), prev = randn({12, 12, 2}, rng);
  double rate_err = 0;
  for (double rho : {0.3, 0.5, 0.8}) {
    const RefinementTrace tr = contraction_probe(linear_refiner(gt, rho), ProbeInput{gt, prev, 0.05, {}}, 5, 0.5, 80.0, 1);
    rate_err = std::max(rate_err, std::abs(tr.rho_fit - rho));
    v.check(tr.bound_holds, "probe bound fails at rho " + fmt("%.1f", rho));
  }
  v.check(rate_err < 1e-9, "fitted rate differs by " + fmt("%.2e", rate_err));
  const double t = seconds_since(t0);
  v.check(t < 60.0, "runtime " + fmt("%.0f s", t));
  v.summary = std::to_string(linear) + " linear cases hold, " + std::to_string(lk) + " lk cases decrease, rate error " +
              fmt("%.1e", rate_err);
  return v;
}

// ---- shared training for criteria 4, 5 and 6 ----

const std::vector<std::string> kVariants = {"rgb_only", "concat_voxel", "concat_met", "full_minus_bidir", "full"};
constexpr std::size_t kSeeds = 3;
constexpr std::size_t kValScenes = 6;

ModelConfig acceptance_config(Variant v, std::uint64_t seed) {
  ModelConfig c;
  c.channels = 16;
  c.temporal_channels = 8;
  c.hidden = 16;
  c.event_frames = 8;
  c.lr0 = 3e-3;
  c.total_iters = 2000;
  c.variant = v;
  c.seed = seed;
  return c;
}

struct Ablation {
  fs::path manifest;
  std::vector<AblationRun> runs;
  AblationReport report;
  double seconds = 0;
};

const Ablation& ablation(const fs::path& work) {
  static std::optional<Ablation> cached;
  if (cached) return *cached;
  Ablation a;
  const auto t0 = Clock::now();
  a.manifest = generate_dataset(load_dataset_spec("default", {{"scenes", "36"}}), work / "data36");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < kSeeds; ++s) seeds.push_back(s);
  a.runs = ablation_layout(work / "runs", kVariants, seeds);
  for (const AblationRun& r : a.runs) {
    const auto t1 = Clock::now();
    const TrainRunResult res =
        train_run(a.manifest, acceptance_config(parse_variant(r.variant), r.seed), r.checkpoint.parent_path(), kValScenes);
    std::printf("  trained %-16s seed %zu  val miou %.4f  (%.0f s)\n", r.variant.c_str(), static_cast<std::size_t>(r.seed),
                res.log.miou.empty() ? 0.0 : res.log.miou.back().second, seconds_since(t1));
    std::fflush(stdout);
  }
  a.report = ablation_harness(read_manifest(a.manifest), a.runs, kValScenes);
  a.seconds = seconds_since(t0);
  cached = std::move(a);
  return *cached;
}

Verdict ablation_ordering(const fs::path& work) {
  Verdict v;
  const Ablation& a = ablation(work);
  const AblationReport& r = a.report;
  auto med = [&](const char* n) { return r.median(n); };
  v.check(med("full") > med("rgb_only"), "full <= rgb_only");
  v.check(med("concat_met") > med("concat_voxel"), "concat_met <= concat_voxel");
  v.check(med("concat_voxel") > med("rgb_only"), "concat_voxel <= rgb_only");
  v.check(med("full") > med("full_minus_bidir"), "full <= full_minus_bidir");
  v.check(a.seconds < 3600.0, "runtime " + fmt("%.0f s", a.seconds));
  std::string s;
  for (const std::string& n : kVariants) s += n + " " + fmt("%.3f", r.median(n)) + ", ";
  v.summary = "median miou " + s + fmt("%.0f s", a.seconds);
  return v;
}

Verdict trainability(const fs::path& work) {
  Verdict v;
  const double m = ablation(work).report.median("full");
  v.check(m >= 0.6, "full median miou " + fmt("%.4f", m) + " < 0.6");
  v.summary = "full median miou " + fmt("%.4f", m) + " over " + std::to_string(kSeeds) + " seeds";
  return v;
}

Verdict cka_ordering(const fs::path& work) {
  Verdict v;
  const auto t0 = Clock::now();
  const Ablation& a = ablation(work);
  const auto it = std::find_if(a.runs.begin(), a.runs.end(),
                               [](const AblationRun& r) { return r.variant == "full" && r.seed == 0; });
  const BrenetModel model = load_checkpoint(it->checkpoint);
  const fs::path suite = generate_dataset(suite_spec(), work / "suite10");
  const std::vector<CkaRow> rows = cka_by_scene(model, read_manifest(suite), 0);
  std::size_t wins = 0;
  double fr = 0, vr = 0;
  for (const CkaRow& r : rows) {
    wins += r.flow_rgb > r.voxel_rgb;
    fr += r.flow_rgb / static_cast<double>(rows.size());
    vr += r.voxel_rgb / static_cast<double>(rows.size());
  }
  v.check(rows.size() == 10, "expected 10 scenes");
  v.check(wins >= 8, "flow beats voxel on " + std::to_string(wins) + "/10 scenes");
  const double t = seconds_since(t0);
  v.check(t < 300.0, "runtime " + fmt("%.0f s", t));
  v.summary = "flow > voxel on " + std::to_string(wins) + "/" + std::to_string(rows.size()) + " scenes, mean cka flow " +
              fmt("%.3f", fr) + " voxel " + fmt("%.3f", vr);
  return v;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b)) if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb || fa.empty()) return false;
  for (const fs::path& p : fa) {
    // The manifest records its own directory.
    if (p.filename() == "manifest.txt") continue;
    if (read_bytes(a / p) != read_bytes(b / p)) return false;
  }
  return true;
}

Verdict determinism(const fs::path& work) {
  Verdict v;
  const DatasetSpec ds = load_dataset_spec("default", {{"scenes", "3"}});
  const fs::path m1 = generate_dataset(ds, work / "det_a"), m2 = generate_dataset(ds, work / "det_b");
  v.check(same_tree(work / "det_a", work / "det_b"), "datasets differ");

  ModelConfig cfg = acceptance_config(Variant::Full, 4);
  cfg.total_iters = 20;
  const TrainRunResult r1 = train_run(m1, cfg, work / "det_run_a", 1);
  const TrainRunResult r2 = train_run(m1, cfg, work / "det_run_b", 1);
  v.check(r1.log.loss == r2.log.loss, "loss curves differ");
  v.check(read_bytes(r1.checkpoint) == read_bytes(r2.checkpoint), "checkpoints differ");
  v.check(read_bytes(r1.metrics) == read_bytes(r2.metrics), "metrics differ");

  // The checkpoint reproduces logits bitwise after a round trip.
  const BrenetModel a = load_checkpoint(r1.checkpoint);
  save_checkpoint(a, work / "det_roundtrip.brn");
  v.check(read_bytes(work / "det_roundtrip.brn") == read_bytes(r1.checkpoint), "re-saved checkpoint differs");
  const BrenetModel b = load_checkpoint(work / "det_roundtrip.brn");
  const ModelInput in = prepare_entry(read_manifest(m1), 0, a.config());
  v.check(max_abs_diff(a.logits(in).value(), b.logits(in).value()) == 0.0, "logits differ after round trip");
  v.summary = "dataset, " + std::to_string(r1.log.loss.size()) + "-step loss curve, checkpoint and logits bitwise equal";
  return v;
}

Verdict degeneracies() {
  Verdict v;
  std::size_t n = 0;
  auto exact = [&](bool cond, const std::string& what) {
    ++n;
    v.check(cond, what);
  };
  Rng rng(3);

  const NdArray x = randn({9, 7, 3}, rng);
  const WarpResult w = warp(x, FlowField{NdArray({9, 7, 2}), 0, 1000, FlowDirection::Forward});
  exact(max_abs_diff(w.values, x) == 0.0, "zero-flow warp is not the identity");
  exact(std::all_of(w.validity.values().begin(), w.validity.values().end(), [](double d) { return d == 1.0; }),
        "zero-flow warp marks invalid pixels");

  const NdArray xd = randn({8, 7, 3}, rng), k = randn({3, 3, 3, 4}, rng);
  const Var dz = o::deformable_conv2d(constant(xd), constant(k), constant(NdArray({8, 7, 18})),
                                      constant(NdArray({8, 7, 9}, 1.0)));
  exact(max_abs_diff(dz.value(), o::conv2d(constant(xd), constant(k), 1, 1).value()) < 1e-12,
        "zero-offset deformable differs from conv2d");

  {
    Rng r(0);
    Brm brm(BrmConfig{.channels = 4, .hidden = 6}, r);
    const NdArray m = randn({8, 8, 4}, rng), fi = randn({8, 8, 4}, rng), fsx = randn({8, 8, 4}, rng);
    brm.force_spatial_mask(1.0);
    exact(max_abs_diff(brm.spatial_attention(constant(m), constant(fi)).value(), brm.image_mlp()(constant(fi)).value()) <
              1e-9,
          "all-ones spatial mask is not a pass-through");
    brm.force_channel_mask(1.0);
    exact(max_abs_diff(brm.channel_attention(constant(fsx), constant(m), constant(fi)).value(), fsx) < 1e-9,
          "all-ones channel mask is not the identity");
    brm.force_spatial_mask(0.0);
    const NdArray zs = brm.spatial_attention(constant(m), constant(fi)).value();
    exact(std::all_of(zs.values().begin(), zs.values().end(), [](double d) { return d == 0.0; }),
          "all-zeros spatial mask is not zero");
    NdArray att;
    const NdArray q = randn({12, 4}, rng);
    NdArray I({4, 4});
    for (std::size_t i = 0; i < 4; ++i) I(i, i) = 1.0;
    cross_attention(constant(q), constant(q), constant(I), constant(I), constant(I), &att);
    double worst = 0;
    for (std::size_t i = 0; i < 12; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 12; ++j) s += att(i, j);
      worst = std::max(worst, std::abs(s - 1.0));
    }
    exact(worst < 1e-9, "attention rows do not sum to one");
  }
  {
    Rng r(0);
    const Tfm tfm(TfmConfig{.channels = 3, .hidden = 5}, r);
    nn::zero_params(tfm.params());
    const NdArray fi = randn({8, 8, 3}, rng);
    const Var out = tfm(constant(NdArray({8, 8, 3})), constant(NdArray({8, 8, 3})), constant(fi));
    exact(max_abs_diff(out.value(), fi) == 0.0, "zero-weight tfm is not the skip");
  }
  {
    MetConfig c;
    c.bins = 2;
    c.temporal_channels = 3;
    c.channels = 4;
    c.hidden = 5;
    c.bias = false;
    Rng r(0);
    const TemporalConv tc(c, r);
    const Cfe cfe(c, r);
    const EventTensorStack st{NdArray({3, 8, 8, 2}), {{0, 10}, {10, 20}, {20, 30}}};
    const MetPair m = build_bidirectional_met(tc, cfe, st, provide_flow_gt_noisy(NdArray({8, 8, 2}), 0, 30, 0.0, 0));
    const auto zero = [](const NdArray& a) {
      return std::all_of(a.values().begin(), a.values().end(), [](double d) { return d == 0.0; });
    };
    exact(zero(m.forward.value()) && zero(m.backward.value()), "static bias-free MET is not zero");
  }
  {
    exact(max_abs_diff(irfft2(rfft2(NdArray({6, 5, 2}, 1.0)), 5), NdArray({6, 5, 2}, 1.0)) < 1e-12,
          "constant image does not survive the fft roundtrip");
  }
  v.summary = std::to_string(n) + " exact cases";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const fs::path work = fs::temp_directory_path() / "evreg_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"kernel correctness", kernels},
      {"registration beats fusion", registration_vs_fusion},
      {"contraction bound", contraction},
      {"cka ordering", [&] { return cka_ordering(work); }},
      {"ablation ordering", [&] { return ablation_ordering(work); }},
      {"trainability", [&] { return trainability(work); }},
      {"determinism and serialization", [&] { return determinism(work); }},
      {"module degeneracies", degeneracies},
  };
  // 5 runs before 4 and 6 so its training log precedes their lines.
  const std::vector<std::size_t> order = {0, 1, 2, 6, 7, 4, 3, 5};
  std::vector<std::string> lines(criteria.size());
  bool all = true;
  for (std::size_t idx : order) {
    if (!only.empty() && !only.count(static_cast<int>(idx + 1))) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[idx].second();
    } catch (const std::exception& e) {
      v.check(false, std::string("threw: ") + e.what());
    }
    std::ostringstream line;
    line << (v.ok ? "PASS" : "FAIL") << " criterion " << idx + 1 << " " << criteria[idx].first << ": " << v.summary;
    for (std::size_t i = 0; i < std::min<std::size_t>(v.failures.size(), 5); ++i) line << " | " << v.failures[i];
    line << " [" << fmt("%.1f s", seconds_since(t0)) << "]";
    lines[idx] = line.str();
    std::printf("%s\n", lines[idx].c_str());
    std::fflush(stdout);
    all = all && v.ok;
  }
  std::printf("\nsummary\n");
  for (const std::string& l : lines)
    if (!l.empty()) std::printf("%s\n", l.c_str());
  fs::remove_all(work);
  return all ? 0 : 1;
}
