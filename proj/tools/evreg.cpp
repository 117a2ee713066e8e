// Command-line front end: dataset generation, representations, training,
// evaluation and the analysis reports. Every output is a file; plots are
// left to external tools reading the CSVs.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "evreg/analysis/ablation.hpp"
#include "evreg/analysis/cka.hpp"
#include "evreg/analysis/contraction.hpp"
#include "evreg/analysis/misalignment.hpp"
#include "evreg/events/formats.hpp"
#include "evreg/model/train.hpp"

namespace fs = std::filesystem;
using namespace evreg;

namespace {

struct SynthArgs {
  std::string spec = "default";
  std::string out;
  long long seed = -1;
  std::vector<std::string> set;
};

struct RepresentArgs {
  std::string in, out, kind, ckpt;
  std::size_t bins = 0, frames = 15;
  double eps = 0.5;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string data, variant = "full", out, config;
  std::size_t iters = 2000, val_scenes = 2, eval_every = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::size_t channels = 0, temporal_channels = 0, hidden = 0, frames = 0, batch = 0;
  bool quiet = false;
};

struct EvalArgs {
  std::string ckpt, data, report;
  std::size_t val_scenes = 2;
  bool all = false;
};

struct AnalyzeArgs {
  std::string data, mode, report, ckpt, runs;
  double eps = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::string> variants = {"rgb_only", "concat_voxel", "concat_met", "full_minus_bidir", "full"};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t val_scenes = 2;
};

KeyValues parse_sets(const std::vector<std::string>& sets) {
  std::string text;
  for (const std::string& s : sets) text += s + "\n";
  return parse_key_values(text, "--set");
}

// [N,H,W,B] -> [H,W,N*B] with channel n*B + b.
NdArray frames_as_channels(const NdArray& s) {
  const std::size_t N = s.dim(0), H = s.dim(1), W = s.dim(2), B = s.dim(3);
  NdArray out({H, W, N * B});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < H * W; ++p)
      for (std::size_t b = 0; b < B; ++b) out[p * N * B + n * B + b] = s[(n * H * W + p) * B + b];
  return out;
}

std::string entry_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

void run_synth(const SynthArgs& a) {
  KeyValues over = parse_sets(a.set);
  if (a.seed >= 0) over["seed"] = std::to_string(a.seed);
  const DatasetSpec ds = load_dataset_spec(a.spec, over);
  std::vector<std::string> warnings;
  const fs::path manifest = generate_dataset(ds, a.out, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << manifest.string() << " (" << ds.scenes * ds.samples_per_scene << " samples)\n";
}

void run_represent(const RepresentArgs& a) {
  const Manifest m = read_manifest(a.in);
  fs::create_directories(a.out);
  if (a.kind == "met") {
    ModelConfig init;
    init.seed = a.seed;
    init.event_frames = a.frames;
    if (a.bins) init.event_bins = a.bins;
    const BrenetModel model = a.ckpt.empty() ? BrenetModel(init) : load_checkpoint(a.ckpt);
    ModelConfig cfg = model.config();
    cfg.flow_eps = a.eps;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      ModelTrace tr;
      model.forward(prepare_entry(m, i, cfg), &tr);
      if (tr.m_f.empty() || tr.m_b.empty()) {
        throw Error("represent: variant " + variant_name(cfg.variant) + " does not build bidirectional motion tensors");
      }
      write_flt1(fs::path(a.out) / (entry_stem(i) + "_met_f.flt"), tr.m_f);
      write_flt1(fs::path(a.out) / (entry_stem(i) + "_met_b.flt"), tr.m_b);
    }
  } else if (a.kind == "frames" || a.kind == "voxel") {
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const SceneSample s = load_sample(m, i);
      const NdArray x = a.kind == "frames"
                            ? frames_as_channels(make_event_stack(s.events, s.t_prev, s.t_k, a.frames,
                                                                  a.bins ? a.bins : 1)
                                                     .data)
                            : build_voxel_grid(s.events, s.t_prev, s.t_k, a.bins ? a.bins : 5);
      write_flt1(fs::path(a.out) / (entry_stem(i) + "_" + a.kind + ".flt"), x);
    }
  }
  std::cout << "wrote " << m.entries.size() << " " << a.kind << " representations to " << a.out << '\n';
}

ModelConfig train_config(const TrainArgs& a) {
  ModelConfig cfg;
  if (!a.config.empty()) cfg = ModelConfig::from_key_values(read_key_values(a.config));
  cfg.variant = parse_variant(a.variant);
  cfg.total_iters = a.iters;
  cfg.seed = a.seed;
  if (a.lr > 0.0) cfg.lr0 = a.lr;
  if (a.channels) cfg.channels = a.channels;
  if (a.temporal_channels) cfg.temporal_channels = a.temporal_channels;
  if (a.hidden) cfg.hidden = a.hidden;
  if (a.frames) cfg.event_frames = a.frames;
  if (a.batch) cfg.batch = a.batch;
  cfg.validate();
  return cfg;
}

void run_train(const TrainArgs& a) {
  const ModelConfig cfg = train_config(a);
  TrainOptions opts;
  opts.eval_every = a.eval_every;
  if (!a.quiet) {
    opts.progress = [](std::size_t it, double loss) {
      if (it % 100 == 0) std::cerr << "iter " << it << " loss " << loss << '\n';
    };
  }
  const TrainRunResult r = train_run(a.data, cfg, a.out, a.val_scenes, opts);
  std::cout << "checkpoint " << r.checkpoint.string() << "\nmetrics " << r.metrics.string() << '\n';
  if (!r.log.miou.empty()) std::cout << "val miou " << r.log.miou.back().second << '\n';
}

void run_eval(const EvalArgs& a) {
  const BrenetModel model = load_checkpoint(a.ckpt);
  const Manifest m = read_manifest(a.data);
  const DataSplit split = load_split(m, model.config(), a.all ? 0 : a.val_scenes);
  const std::vector<ModelInput>& inputs = a.all ? split.train : split.val;
  if (inputs.empty()) throw Error("eval: no samples to evaluate");
  const SegmentationScore s = evaluate(model, inputs);
  std::cout << "miou " << s.miou << " acc " << s.accuracy << " samples " << inputs.size() << '\n';
  if (!a.report.empty()) {
    AblationReport rep;
    rep.rows.push_back({variant_name(model.config().variant), model.config().seed, s.miou, s.accuracy});
    write_ablation_csv(rep, a.report);
  }
}

void run_analyze(const AnalyzeArgs& a) {
  const Manifest m = read_manifest(a.data);
  if (a.mode == "misalign") {
    const MisalignmentReport r = measure_misalignment(manifest_spec(m), a.eps, a.seed);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    write_misalignment_csv(r, a.report);
    std::cout << "mean delta_fuse " << r.delta_fuse << " px, mean delta_reg " << r.delta_reg << " px (eps " << a.eps
              << ")\n";
  } else if (a.mode == "contraction") {
    const auto rows = contraction_sweep(manifest_spec(m), a.seed);
    write_contraction_csv(rows, a.report);
    const auto holding = std::count_if(rows.begin(), rows.end(), [](const ContractionRow& r) { return r.holds; });
    std::cout << holding << " of " << rows.size() << " refinement runs within the contraction bound\n";
  } else if (a.mode == "cka") {
    if (a.ckpt.empty()) throw Error("analyze: --mode cka needs --ckpt");
    const auto rows = cka_by_scene(load_checkpoint(a.ckpt), m, a.seed);
    write_cka_csv(rows, a.report);
    const auto wins = std::count_if(rows.begin(), rows.end(), [](const CkaRow& r) { return r.flow_rgb > r.voxel_rgb; });
    std::cout << "flow-derived features closer to RGB than voxel features in " << wins << " of " << rows.size()
              << " scenes\n";
  } else if (a.mode == "ablation") {
    if (a.runs.empty()) throw Error("analyze: --mode ablation needs --runs");
    const AblationReport r = ablation_harness(m, ablation_layout(a.runs, a.variants, a.seeds), a.val_scenes);
    write_ablation_csv(r, a.report);
    for (const auto& [v, med] : r.ordering) std::cout << v << " median miou " << med << '\n';
  }
  std::cout << "report " << a.report << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-guided segmentation toolkit: synthetic data, training and analysis"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", sa.spec, "\"default\", \"small\" or a key=value recipe file")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Recipe seed override");
  synth->add_option("--set", sa.set, "Recipe override key=value (repeatable)");

  RepresentArgs ra;
  auto* represent = app.add_subcommand("represent", "Write per-sample event representations as FLT1");
  represent->add_option("--in", ra.in, "Manifest or dataset directory")->required();
  represent->add_option("--kind", ra.kind, "Representation")
      ->required()
      ->check(CLI::IsMember({"frames", "voxel", "met"}));
  represent->add_option("--bins", ra.bins, "Temporal bins (frames: per frame, default 1; voxel: default 5)");
  represent->add_option("--frames", ra.frames, "Event frames per interval")->capture_default_str();
  represent->add_option("--ckpt", ra.ckpt, "met: checkpoint providing the estimator weights");
  represent->add_option("--eps", ra.eps, "met: RMS error of the supplied flow (px)")->capture_default_str();
  represent->add_option("--seed", ra.seed, "met: initialisation seed without --ckpt")->capture_default_str();
  represent->add_option("--out", ra.out, "Output directory")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one ablation variant");
  train->add_option("--data", ta.data, "Manifest or dataset directory")->required();
  std::vector<std::string> variant_ids;
  for (Variant v : all_variants()) variant_ids.push_back(variant_name(v));
  train->add_option("--variant", ta.variant, "Variant id")->capture_default_str()->check(CLI::IsMember(variant_ids));
  train->add_option("--iters", ta.iters, "Iterations")->capture_default_str();
  train->add_option("--seed", ta.seed, "Initialisation and shuffling seed")->capture_default_str();
  train->add_option("--out", ta.out, "Run directory (checkpoint.brn, metrics.csv)")->required();
  train->add_option("--config", ta.config, "Base model config as key=value text");
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_option("--channels", ta.channels, "Feature width C");
  train->add_option("--temporal-channels", ta.temporal_channels, "Temporal feature width");
  train->add_option("--hidden", ta.hidden, "MLP hidden width");
  train->add_option("--frames", ta.frames, "Event frames per interval");
  train->add_option("--batch", ta.batch, "Samples per step");
  train->add_option("--val-scenes", ta.val_scenes, "Trailing scenes held out for validation")->capture_default_str();
  train->add_option("--eval-every", ta.eval_every, "Validation period in iterations (0: at the end)");
  train->add_flag("--quiet", ta.quiet, "No progress on stderr");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval->add_option("--data", ea.data, "Manifest or dataset directory")->required();
  eval->add_option("--report", ea.report, "CSV: variant,seed,miou,acc");
  eval->add_option("--val-scenes", ea.val_scenes, "Trailing scenes to score")->capture_default_str();
  eval->add_flag("--all", ea.all, "Score every sample instead of the validation scenes");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Measurement reports");
  analyze->add_option("--data", aa.data, "Manifest or dataset directory")->required();
  analyze->add_option("--mode", aa.mode, "Report kind")
      ->required()
      ->check(CLI::IsMember({"cka", "misalign", "contraction", "ablation"}));
  analyze->add_option("--eps", aa.eps, "misalign: RMS flow error (px)")->capture_default_str();
  analyze->add_option("--report", aa.report, "Output CSV")->required();
  analyze->add_option("--ckpt", aa.ckpt, "cka: trained checkpoint");
  analyze->add_option("--runs", aa.runs, "ablation: <runs>/<variant>/seed<k>/checkpoint.brn");
  analyze->add_option("--variants", aa.variants, "ablation: variant ids")
      ->capture_default_str()
      ->check(CLI::IsMember(variant_ids));
  analyze->add_option("--seeds", aa.seeds, "ablation: seeds")->capture_default_str();
  analyze->add_option("--val-scenes", aa.val_scenes, "ablation: trailing scenes scored")->capture_default_str();
  analyze->add_option("--seed", aa.seed, "Sampling and noise seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) run_synth(sa);
    if (*represent) run_represent(ra);
    if (*train) run_train(ta);
    if (*eval) run_eval(ea);
    if (*analyze) run_analyze(aa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
