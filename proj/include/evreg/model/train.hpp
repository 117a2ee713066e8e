#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "evreg/analysis/metrics.hpp"
#include "evreg/model/model.hpp"

namespace evreg {

/// Per-pixel softmax cross-entropy over logits [H,W,K] (or [P,K]) averaged
/// over the hardest ceil(keep_fraction * V) of the V valid pixels; ties go to
/// the lower pixel index. Targets outside [0,K) are ignored.
Var ohem_cross_entropy(const Var& logits, const NdArray& target, double keep_fraction);

/// lr0 * (1 - t/T)^power, clamped to 0 for t >= T.
double poly_lr(double lr0, std::size_t t, std::size_t total, double power);

struct AdamWConfig {
  double lr0 = 6e-5;
  std::size_t total_iters = 2000;
  double poly_power = 0.9;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;  // decoupled: p -= lr * wd * p
};

AdamWConfig adamw_config(const ModelConfig& cfg);

/// AdamW with bias-corrected moments and the poly schedule.
class AdamW {
 public:
  AdamW(nn::ParamList params, const AdamWConfig& cfg);

  /// Update t >= 1 from the gradients currently held by the parameters.
  /// Returns the learning rate used. Throws before touching any parameter
  /// when a gradient is non-finite, naming the parameter.
  double step(std::size_t t);
  void zero_grad();

  const std::vector<NdArray>& first_moments() const { return m_; }
  const std::vector<NdArray>& second_moments() const { return v_; }

 private:
  nn::ParamList params_;
  AdamWConfig cfg_;
  std::vector<NdArray> m_, v_;
};

struct TrainLog {
  std::vector<double> loss;  // one entry per iteration, batch mean
  std::vector<double> lr;
  std::vector<std::pair<std::size_t, double>> miou;  // (iteration, validation mIoU)
};

struct TrainOptions {
  std::size_t eval_every = 0;  // 0: evaluate once after the last iteration
  /// Called after every iteration with (iteration, loss).
  std::function<void(std::size_t, double)> progress;
};

/// Runs cfg.total_iters iterations of batch cfg.batch (gradient
/// accumulation), reshuffling the training order each epoch from cfg.seed.
/// Parameters stay float32-representable after every step. Validation is
/// skipped when `val` is empty.
TrainLog train_model(BrenetModel& model, const std::vector<ModelInput>& train,
                     const std::vector<ModelInput>& val, const TrainOptions& opts = {});

/// Forward passes over `inputs`, split across EVREG_THREADS threads.
std::vector<SegmentationOutput> predict(const BrenetModel& model, const std::vector<ModelInput>& inputs);
SegmentationScore evaluate(const BrenetModel& model, const std::vector<ModelInput>& inputs);

struct DataSplit {
  std::vector<ModelInput> train, val;
};

/// prepare_input for manifest entry i with the flow seed derived from its
/// (scene, index).
ModelInput prepare_entry(const Manifest& m, std::size_t i, const ModelConfig& cfg);

/// Prepares every manifest entry; entries of the last `val_scenes` scenes
/// form the validation split. Flow noise is seeded per (scene, index), so
/// every model configuration sees the same inputs.
DataSplit load_split(const Manifest& m, const ModelConfig& cfg, std::size_t val_scenes);

/// "iter,loss,lr" plus ",miou" when any validation score exists; miou is
/// empty on rows without an evaluation.
void write_metrics_csv(const TrainLog& log, const std::filesystem::path& path);

/// BRN1: "BRN1", u32 version, u32 length + config key=value text, u32
/// parameter count, then per parameter u32 length + name, u32 rank, rank x
/// u32 dims and one FLT1 segment. Little-endian.
void save_checkpoint(const BrenetModel& model, const std::filesystem::path& path);
BrenetModel load_checkpoint(const std::filesystem::path& path);

struct TrainRunResult {
  TrainLog log;
  std::filesystem::path checkpoint, metrics;
};

/// load_split + train_model, writing checkpoint.brn and metrics.csv into
/// out_dir.
TrainRunResult train_run(const std::filesystem::path& manifest, const ModelConfig& cfg,
                         const std::filesystem::path& out_dir, std::size_t val_scenes = 2,
                         const TrainOptions& opts = {});

}  // namespace evreg
