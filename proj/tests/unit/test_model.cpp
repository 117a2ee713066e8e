#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "evreg/model/train.hpp"
#include "evreg/tensor/gradcheck.hpp"

using namespace evreg;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(Variant v = Variant::Full) {
  ModelConfig c;
  c.channels = 4;
  c.temporal_channels = 4;
  c.hidden = 4;
  c.event_frames = 4;
  c.variant = v;
  return c;
}

const std::vector<SceneSample>& scene0() {
  static const std::vector<SceneSample> s = generate_scene(make_scene_spec(load_dataset_spec("default"), 0));
  return s;
}

ModelInput sample_input(const ModelConfig& cfg, std::size_t k = 1) { return prepare_input(scene0()[k], cfg, 7); }

// 16x16 input with random frame, sparse events and smooth-ish flows.
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

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("evreg_test_model_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Two-class logits [P,2] whose cross-entropy against label 0 is ce[p].
NdArray logits_with_ce(const std::vector<double>& ce) {
  NdArray z({ce.size(), 2});
  for (std::size_t p = 0; p < ce.size(); ++p) z(p, 1) = std::log(std::expm1(ce[p]));
  return z;
}

}  // namespace

TEST_SUITE("forward_brenet") {
  TEST_CASE("logits are [64,64,4] and the mask is their argmax") {
    const ModelConfig cfg = tiny_config();
    const BrenetModel m(cfg);
    const SegmentationOutput out = m.forward(sample_input(cfg));
    CHECK(out.logits.shape() == Shape{64, 64, 4});
    CHECK(out.mask.shape() == Shape{64, 64});
    CHECK(max_abs_diff(out.mask, argmax_classes(out.logits)) == 0.0);
  }

  TEST_CASE("default widths give the same output grid") {
    ModelConfig cfg;
    cfg.event_frames = 4;
    const BrenetModel m(cfg);
    CHECK(m.forward(sample_input(cfg)).logits.shape() == Shape{64, 64, 4});
  }

  TEST_CASE("repeated calls are bitwise identical") {
    const ModelConfig cfg = tiny_config();
    const BrenetModel a(cfg), b(cfg);
    const ModelInput in = sample_input(cfg);
    const NdArray l1 = a.forward(in).logits, l2 = a.forward(in).logits, l3 = b.forward(in).logits;
    CHECK(l1.vec() == l2.vec());
    CHECK(l1.vec() == l3.vec());
  }

  TEST_CASE("argmax breaks ties toward the lower class") {
    const NdArray z({1, 2, 3}, {1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
    const NdArray m = argmax_classes(z);
    CHECK(m[0] == 0.0);
    CHECK(m[1] == 1.0);
  }

  TEST_CASE("loss gradient wrt the frame on a 16x16 crop") {
    ModelConfig cfg = tiny_config();
    cfg.event_frames = 3;
    for (Variant v : {Variant::Full, Variant::RgbOnly, Variant::ConcatMet}) {
      cfg.variant = v;
      const BrenetModel m(cfg);
      const ModelInput in = crop_input(cfg, 3);
      const double e = grad_check(
          [&](const std::vector<Var>& x) { return ohem_cross_entropy(m.logits(x[0], in), in.mask, 1.0); }, {in.rgb},
          {.eps = 1e-6, .seed = 1, .max_entries = 24, .wrt = {}});
      CAPTURE(variant_name(v));
      CHECK(e < 1e-3);
    }
  }

  TEST_CASE("input grid errors") {
    const ModelConfig cfg = tiny_config();
    const BrenetModel m(cfg);
    ModelInput in = crop_input(cfg, 1);
    in.rgb = NdArray({18, 18, 1});
    CHECK_THROWS_AS(m.forward(in), Error);
    in = crop_input(cfg, 1);
    in.flows.forward.u = NdArray({8, 8, 2});
    CHECK_THROWS_AS(m.forward(in), Error);
  }
}

TEST_SUITE("ohem_cross_entropy") {
  TEST_CASE("confident correct logits give ~0 loss") {
    NdArray z({3, 4});
    const NdArray t({3}, {0.0, 2.0, 3.0});
    for (std::size_t p = 0; p < 3; ++p) z(p, static_cast<std::size_t>(t[p])) = 20.0;
    CHECK(ohem_cross_entropy(constant(z), t, 0.25).value()[0] < 1e-6);
  }

  TEST_CASE("keeps the hardest half") {
    const NdArray z = logits_with_ce({2.0, 1.0, 0.5, 0.1});
    const double l = ohem_cross_entropy(constant(z), NdArray({4}), 0.5).value()[0];
    CHECK(std::abs(l - 1.5) < 1e-12);
  }

  TEST_CASE("keep fraction 1 is the plain mean") {
    Rng rng(0);
    const NdArray z = randn({8, 8, 3}, rng);
    NdArray t({8, 8});
    double mean = 0.0;
    for (std::size_t p = 0; p < 64; ++p) {
      t[p] = static_cast<double>(p % 3);
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += std::exp(z[p * 3 + k]);
      mean += (std::log(s) - z[p * 3 + p % 3]) / 64.0;
    }
    CHECK(std::abs(ohem_cross_entropy(constant(z), t, 1.0).value()[0] - mean) < 1e-12);
  }

  TEST_CASE("ignored labels and errors") {
    const NdArray z = logits_with_ce({2.0, 1.0, 0.5, 0.1});
    const NdArray t({4}, {255.0, 0.0, 0.0, 255.0});
    CHECK(std::abs(ohem_cross_entropy(constant(z), t, 1.0).value()[0] - 0.75) < 1e-12);
    CHECK_THROWS_WITH_AS(ohem_cross_entropy(constant(z), NdArray({4}, 255.0), 0.5), doctest::Contains("no valid pixels"),
                         Error);
    CHECK_THROWS_AS(ohem_cross_entropy(constant(z), NdArray({4}), 0.0), Error);
    CHECK_THROWS_AS(ohem_cross_entropy(constant(z), NdArray({5}), 0.5), Error);
  }

  TEST_CASE("gradient over the selected pixels") {
    Rng rng(2);
    const NdArray z = randn({6, 6, 4}, rng, 2.0);
    NdArray t({6, 6});
    for (std::size_t p = 0; p < 36; ++p) t[p] = static_cast<double>((p * 7) % 4);
    const double e = grad_check([&](const std::vector<Var>& v) { return ohem_cross_entropy(v[0], t, 0.25); }, {z},
                                {.eps = 1e-6, .seed = 0, .max_entries = 0, .wrt = {}});
    CHECK(e < 1e-5);
  }
}

TEST_SUITE("optimizer_step") {
  TEST_CASE("poly schedule endpoints") {
    CHECK(poly_lr(6e-5, 2000, 2000, 0.9) == 0.0);
    CHECK(poly_lr(6e-5, 0, 2000, 0.9) == 6e-5);
    CHECK(std::abs(poly_lr(6e-5, 1, 2000, 0.9) - 6e-5) < 1e-7);
    CHECK(poly_lr(1.0, 500, 1000, 1.0) == 0.5);
  }

  TEST_CASE("one scalar step matches a handwritten reference") {
    Var p = parameter(NdArray({1}, 0.5));
    nn::ParamList pl;
    pl.add("p", p);
    AdamWConfig c;
    c.lr0 = 1e-3;
    c.total_iters = 10;
    AdamW opt(pl, c);
    backward(ops::sum(p));  // g = 1
    const double lr = opt.step(1);
    const double lr_ref = 1e-3 * std::pow(0.9, 0.9);
    // m = 0.1, v = 0.001; bias-corrected m/sqrt(v) = 1 / (1 + 1e-8).
    const double ref = 0.5 - lr_ref * (1.0 / (1.0 + 1e-8) + 0.01 * 0.5);
    CHECK(std::abs(lr - lr_ref) < 1e-18);
    CHECK(std::abs(p.value()[0] - ref) < 1e-12);
  }

  TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    Rng rng(0);
    Var p = parameter(randn({3, 3}, rng));
    const NdArray before = p.value();
    nn::ParamList pl;
    pl.add("p", p);
    AdamWConfig c;
    c.lr0 = 1e-2;
    c.weight_decay = 0.0;
    AdamW opt(pl, c);
    backward(ops::scale(ops::sum(p), 0.0));
    for (std::size_t t = 1; t <= 3; ++t) opt.step(t);
    CHECK(p.value().vec() == before.vec());
  }

  TEST_CASE("the final step has zero learning rate") {
    Var p = parameter(NdArray({1}, 1.0));
    nn::ParamList pl;
    pl.add("p", p);
    AdamWConfig c;
    c.total_iters = 3;
    AdamW opt(pl, c);
    backward(ops::sum(p));
    CHECK(opt.step(3) == 0.0);
    CHECK(p.value()[0] == 1.0);
  }

  TEST_CASE("non-finite gradients name the parameter") {
    Var p = parameter(NdArray({2}, 1.0));
    nn::ParamList pl;
    pl.add("encoder/c1/k", p);
    AdamW opt(pl, AdamWConfig{});
    backward(ops::scale(ops::sum(p), std::numeric_limits<double>::infinity()));
    CHECK_THROWS_WITH_AS(opt.step(1), doctest::Contains("encoder/c1/k"), Error);
    CHECK(p.value()[0] == 1.0);
    CHECK_THROWS_AS(opt.step(0), Error);
  }
}

TEST_SUITE("train_run") {
  TEST_CASE("zero iterations write the initialisation") {
    const fs::path dir = temp_dir("zero");
    DatasetSpec ds = load_dataset_spec("default");
    ds.scenes = 2;
    generate_dataset(ds, dir / "data");
    ModelConfig cfg = tiny_config();
    cfg.total_iters = 0;
    const TrainRunResult r = train_run(dir / "data", cfg, dir / "run", 1);
    const BrenetModel init(cfg), loaded = load_checkpoint(r.checkpoint);
    const nn::ParamList a = init.params(), b = loaded.params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.items()[i].name == b.items()[i].name);
      CHECK(a.items()[i].var.value().vec() == b.items()[i].var.value().vec());
    }
    std::ifstream csv(r.metrics);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "iter,loss,lr,miou");
  }

  TEST_CASE("same seed twice gives bitwise-identical curves and checkpoints") {
    const fs::path dir = temp_dir("determinism");
    DatasetSpec ds = load_dataset_spec("default");
    ds.scenes = 3;
    generate_dataset(ds, dir / "data");
    ModelConfig cfg = tiny_config();
    cfg.total_iters = 6;
    cfg.lr0 = 1e-3;
    const TrainRunResult a = train_run(dir / "data", cfg, dir / "a", 1);
    const TrainRunResult b = train_run(dir / "data", cfg, dir / "b", 1);
    CHECK(a.log.loss == b.log.loss);
    CHECK(a.log.lr == b.log.lr);
    const auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    CHECK(slurp(a.checkpoint) == slurp(b.checkpoint));
    CHECK(slurp(a.metrics) == slurp(b.metrics));
    cfg.seed = 1;
    const TrainRunResult c = train_run(dir / "data", cfg, dir / "c", 1);
    CHECK(c.log.loss != a.log.loss);
  }

  TEST_CASE("loss at iteration 200 is below iteration 1 (median over seeds 0-2)") {
    const Manifest m = [] {
      const fs::path dir = temp_dir("curve");
      generate_dataset(load_dataset_spec("default"), dir);
      return read_manifest(dir);
    }();
    std::vector<double> first, last;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ModelConfig cfg = tiny_config();
      cfg.seed = seed;
      cfg.total_iters = 200;
      cfg.lr0 = 1e-3;
      const DataSplit split = load_split(m, cfg, 2);
      BrenetModel model(cfg);
      const TrainLog log = train_model(model, split.train, {});
      first.push_back(log.loss.front());
      last.push_back(log.loss.back());
      CHECK(log.lr.back() == 0.0);
    }
    std::sort(first.begin(), first.end());
    std::sort(last.begin(), last.end());
    CHECK(last[1] < first[1]);
  }

  TEST_CASE("checkpoint roundtrip reproduces logits bitwise") {
    const fs::path dir = temp_dir("roundtrip");
    ModelConfig cfg = tiny_config();
    const ModelInput in = sample_input(cfg);
    BrenetModel m(cfg);
    // A few optimizer steps move the weights off their initial values.
    AdamWConfig ac = adamw_config(cfg);
    ac.lr0 = 1e-2;
    AdamW opt(m.params(), ac);
    for (std::size_t t = 1; t <= 3; ++t) {
      opt.zero_grad();
      backward(ohem_cross_entropy(m.logits(in), in.mask, 0.25));
      opt.step(t);
      nn::snap_to_float(m.params());
    }
    save_checkpoint(m, dir / "m.brn");
    const BrenetModel back = load_checkpoint(dir / "m.brn");
    CHECK(back.config().to_key_values() == cfg.to_key_values());
    CHECK(m.forward(in).logits.vec() == back.forward(in).logits.vec());
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    const fs::path dir = temp_dir("corrupt");
    {
      std::ofstream out(dir / "bad.brn", std::ios::binary);
      out << "XXXX";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.brn"), doctest::Contains("BRN1"), Error);
    const BrenetModel m(tiny_config());
    save_checkpoint(m, dir / "ok.brn");
    const auto size = fs::file_size(dir / "ok.brn");
    fs::resize_file(dir / "ok.brn", size - 10);
    CHECK_THROWS_AS(load_checkpoint(dir / "ok.brn"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.brn"), Error);
  }
}

TEST_SUITE("variant_factory") {
  TEST_CASE("ids roundtrip and unknown ids throw") {
    for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
    CHECK(all_variants().size() == 9);
    CHECK_THROWS_WITH_AS(variant_factory("full_plus", tiny_config()), doctest::Contains("unknown variant"), Error);
  }

  TEST_CASE("rgb_only has fewer parameters than full") {
    const ModelConfig cfg = tiny_config();
    CHECK(variant_factory("rgb_only", cfg).params().scalar_count() <
          variant_factory("full", cfg).params().scalar_count());
  }

  TEST_CASE("full_minus_bidir never reads the backward flow") {
    const ModelConfig cfg = tiny_config();
    const ModelInput in = sample_input(cfg);
    const BrenetModel uni = variant_factory("full_minus_bidir", cfg);
    const BrenetModel bi = variant_factory("full", cfg);
    uni.forward(in);
    backward(ops::mean(uni.logits(in)));
    bi.forward(in);
    CHECK(uni.backward_flow_reads() == 0);
    CHECK(bi.backward_flow_reads() == 1);
  }

  TEST_CASE("all variants run forward and backward on a 64x64 sample") {
    const ModelConfig cfg = tiny_config();
    const ModelInput in = sample_input(cfg);
    for (Variant v : all_variants()) {
      CAPTURE(variant_name(v));
      const BrenetModel m = variant_factory(variant_name(v), cfg);
      const Var loss = ohem_cross_entropy(m.logits(in), in.mask, 0.25);
      backward(loss);
      CHECK(std::isfinite(loss.value()[0]));
      bool any = false;
      for (const auto& p : m.params()) any = any || l2_norm(p.var.grad()) > 0.0;
      CHECK(any);
    }
  }

  TEST_CASE("encoder and decoder initialisation is shared across variants") {
    const ModelConfig cfg = tiny_config();
    const BrenetModel a = variant_factory("rgb_only", cfg), b = variant_factory("full", cfg);
    CHECK(a.params().find("encoder/c2/k").value().vec() == b.params().find("encoder/c2/k").value().vec());
    CHECK(a.params().find("decoder/fc2/w").value().vec() == b.params().find("decoder/fc2/w").value().vec());
  }

  TEST_CASE("config key=value roundtrip and validation") {
    ModelConfig c = tiny_config(Variant::ConcatVoxel);
    c.lr0 = 3e-3;
    const ModelConfig back = ModelConfig::from_key_values(c.to_key_values());
    CHECK(back.to_key_values() == c.to_key_values());
    KeyValues bad = c.to_key_values();
    bad["num_classes"] = "1";
    CHECK_THROWS_AS(ModelConfig::from_key_values(bad), Error);
    bad = c.to_key_values();
    bad["ohem_keep_fraction"] = "1.5";
    CHECK_THROWS_AS(ModelConfig::from_key_values(bad), Error);
    CHECK_THROWS_AS(ModelConfig::from_key_values({{"colour", "red"}}), Error);
  }
}
