#pragma once

// Two-stage training: the joint multiscale model first, then the residual
// network against the frozen joint model. Plus evaluation runs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "udc/autodiff.hpp"
#include "udc/lidarsim.hpp"
#include "udc/losses.hpp"
#include "udc/metrics.hpp"
#include "udc/model.hpp"

namespace udc {

// ---- optimizer ----

struct OptimState {
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Bias-corrected Adam. Moments are allocated on the first call; later
/// calls require the same shapes (std::invalid_argument otherwise).
void adam_step(OptimState& state, const std::vector<ad::Tensor*>& params,
               const std::vector<ad::Tensor>& grads);

// ---- configuration ----

enum class Stage { kOne = 1, kTwo = 2 };

struct TrainConfig {
  Stage stage = Stage::kOne;
  /// Non-positive selects the stage default (1e-4 stage one, 2e-4 stage two).
  double lr = 0.0;
  int epochs = 30;
  int batch = 4;
  int lr_decay_every = 10;
  double lr_decay_factor = 0.5;
  /// "ud" or "mse" for stage one, "ur" or "urb" for stage two.
  std::string loss = "ud";
  bool jeffrey = true;
  std::uint64_t seed = 1;
  /// Empty selects default_scale_weights(ns).
  std::vector<double> scale_weights;
  ModelConfig model;

  double base_lr() const;
  /// lr·factor^⌊epoch/every⌋.
  double lr_at(int epoch) const;
  /// Throws std::invalid_argument when inconsistent.
  void validate() const;
};

/// Line-based key=value text; '#' starts a comment. Unknown keys and bad
/// values throw std::invalid_argument.
void apply_setting(TrainConfig& cfg, const std::string& key,
                   const std::string& value);
TrainConfig parse_train_config(std::istream& in, TrainConfig base = {});
TrainConfig read_train_config(const std::filesystem::path& path,
                              TrainConfig base = {});

// ---- logs ----

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  /// Loss actually optimized this epoch, e.g. "ud", "ur", "urb-l1".
  std::string loss_family;
  double lr = 0.0;
  MetricReport clean;
  MetricReport semi;
};

struct TrainLog {
  std::vector<EpochRecord> records;
};

void write_log_csv(std::ostream& out, const TrainLog& log);
void write_log_csv(const std::filesystem::path& path, const TrainLog& log);

using EpochCallback = std::function<void(const EpochRecord&)>;

// ---- training ----

struct Stage1Result {
  JointModelParams params;
  TrainLog log;
};

struct Stage2Result {
  ResidualNetParams params;
  TrainLog log;
};

/// Adam on Σ_k ω_k·L_k over the pyramid, supervised by the semi-dense GT
/// max-pooled to every scale. Metrics per epoch are computed on `eval`.
Stage1Result train_stage1(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, JointModelParams init,
                          const EpochCallback& on_epoch = {});
Stage1Result train_stage1(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval,
                          const EpochCallback& on_epoch = {});

/// Trains the residual network with the stage-one model held fixed.
Stage2Result train_stage2(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, const JointModelParams& stage1,
                          ResidualNetParams init,
                          const EpochCallback& on_epoch = {});
Stage2Result train_stage2(const TrainConfig& cfg, const Dataset& train,
                          const Dataset& eval, const JointModelParams& stage1,
                          const EpochCallback& on_epoch = {});

/// Per-batch frame order for an epoch: a seeded permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

// ---- evaluation ----

enum class Against { kClean, kSemi };

struct FramePrediction {
  ScaleOutput stage1;
  /// Equals stage1.depth when there is no residual network.
  DepthGrid final_depth;
  FieldGrid residual;
};

FramePrediction predict(const JointModelParams& stage1,
                        const ResidualNetParams* residual, const Frame& frame);

struct EvalResult {
  /// Field-wise mean of the per-frame reports; n_valid is the total.
  MetricReport mean;
  std::vector<MetricReport> per_frame;
};

MetricReport mean_report(const std::vector<MetricReport>& reports);

EvalResult eval_run(const JointModelParams& stage1,
                    const ResidualNetParams* residual, const Dataset& data,
                    Against against);

/// Same, over precomputed final depths (one per frame).
EvalResult eval_predictions(const std::vector<DepthGrid>& finals,
                            const Dataset& data, Against against);

}  // namespace udc
