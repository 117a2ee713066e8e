#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "evreg/flow/flow.hpp"
#include "evreg/fusion/tfm.hpp"
#include "evreg/met/met.hpp"
#include "evreg/registration/brm.hpp"
#include "evreg/synth/dataset.hpp"

namespace evreg {

enum class Variant {
  RgbOnly,
  ConcatVoxel,
  ConcatMet,
  ConcatFlow,
  ConcatTemporal,
  FullMinusBidir,
  FullMinusBrm,
  FullMinusTfm,
  Full,
};

/// Throws on unknown ids; the error lists the accepted ones.
Variant parse_variant(const std::string& id);
std::string variant_name(Variant v);
const std::vector<Variant>& all_variants();

struct ModelConfig {
  std::size_t c_in = 1;
  std::size_t channels = 64;           // C
  std::size_t temporal_channels = 32;  // C_t
  std::size_t hidden = 64;             // every MLP's hidden width
  std::size_t num_classes = 4;
  Variant variant = Variant::Full;
  std::uint64_t seed = 0;
  double lr0 = 6e-5;
  std::size_t total_iters = 2000;
  double ohem_keep_fraction = 0.25;
  double poly_power = 0.9;
  double weight_decay = 0.01;
  std::size_t batch = 2;
  // Input preparation.
  std::size_t event_frames = 15;  // N
  std::size_t event_bins = 1;     // B per frame
  std::size_t voxel_bins = 5;
  double flow_eps = 0.5;  // RMS error of the provided flows, px

  /// Throws on num_classes < 2, keep fraction outside (0,1] and zero widths.
  void validate() const;
  KeyValues to_key_values() const;
  /// Unknown keys throw; missing keys keep their defaults.
  static ModelConfig from_key_values(const KeyValues& kv);
};

/// Everything one forward pass reads, prepared once per sample.
struct ModelInput {
  NdArray rgb;              // [H,W,c_in] in [0,1]
  EventTensorStack events;  // [N,H,W,B] over [t_prev, t_k]
  NdArray voxel;            // [H,W,voxel_bins]
  FlowPair flows;           // O_f, O_b with RMS error flow_eps
  NdArray mask;             // [H,W] labels, empty when unknown
};

/// Frame scaled to [0,1] and replicated over c_in; events stacked and
/// voxelised over [t_prev, t_k]; flows from provide_flow_gt_noisy with
/// cfg.flow_eps, seeded by `flow_seed`.
ModelInput prepare_input(const SceneSample& sample, const ModelConfig& cfg, std::uint64_t flow_seed);

struct SegmentationOutput {
  NdArray logits;  // [H,W,num_classes]
  NdArray mask;    // [H,W] argmax over classes, lowest index on ties
};

NdArray argmax_classes(const NdArray& logits);

/// Intermediate H/4 features of one pass; fields a variant lacks stay empty.
struct ModelTrace {
  NdArray f_i;             // encoder output
  NdArray m_f, m_b;        // motion-enhanced tensors
  NdArray representation;  // the concat_* branch input
  NdArray fused;           // F'
};

/// conv3x3 stride 1, 2, 2, each followed by relu: [H,W,c_in] -> [H/4,W/4,C].
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t c_in, std::size_t channels, Rng& rng);
  Var operator()(const Var& x) const;
  nn::ParamList params() const;

 private:
  nn::Conv2d c1_, c2_, c3_;
};

/// The segmentation network of one ablation variant. Modules a variant does
/// not use are never constructed, so parameter counts differ per variant.
/// Construction order is fixed, so the encoder and decoder start from the
/// same weights in every variant with the same seed.
class BrenetModel {
 public:
  explicit BrenetModel(const ModelConfig& cfg);
  // Copies would share parameter storage; moves are fine.
  BrenetModel(const BrenetModel&) = delete;
  BrenetModel& operator=(const BrenetModel&) = delete;
  BrenetModel(BrenetModel&&) = default;
  BrenetModel& operator=(BrenetModel&&) = default;

  /// [H,W,num_classes] logits; H and W must be multiples of 4.
  Var logits(const ModelInput& in, ModelTrace* trace = nullptr) const;
  /// Same with the frame supplied as a graph value (in.rgb is ignored), so
  /// gradients can reach the encoder input.
  Var logits(const Var& rgb, const ModelInput& in, ModelTrace* trace = nullptr) const;
  SegmentationOutput forward(const ModelInput& in, ModelTrace* trace = nullptr) const;

  nn::ParamList params() const;
  const ModelConfig& config() const { return cfg_; }

  /// Probe: number of passes that read the backward flow O_b.
  std::size_t backward_flow_reads() const { return backward_reads_->load(); }

 private:
  const FlowField& backward_flow(const ModelInput& in) const;
  Var concat_fuse(const std::vector<Var>& parts) const;

  ModelConfig cfg_;
  Encoder encoder_;
  nn::Mlp decoder_;
  Encoder voxel_encoder_;
  TemporalConv tconv_;
  Cfe cfe_;
  Brm brm_;
  Tfm tfm_;
  nn::Linear fuse_;     // F_I + fuse(concat(...)) wherever a module is replaced
  nn::Linear brm_sub_;  // full_minus_brm: F_r = F_I + brm_sub(concat(M, F_I))
  std::shared_ptr<std::atomic<std::size_t>> backward_reads_ = std::make_shared<std::atomic<std::size_t>>(0);
};

/// BrenetModel with cfg.variant = parse_variant(id).
BrenetModel variant_factory(const std::string& id, ModelConfig cfg);

}  // namespace evreg
