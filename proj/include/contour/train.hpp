#pragma once

// Training, evaluation, benchmark metrics and the transfer protocol.
//
// A run directory holds:
//   config.json      run configuration snapshot, including the data path
//   checkpoint.ckpt  parameters at the latest finite evaluation point
//   metrics.json     evaluation log and summary metrics; no wall-clock data,
//                    so identical runs produce identical bytes
//   timing.json      wall time and throughput

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contour/loader.hpp"
#include "contour/models.hpp"

namespace contour {

struct TrainConfig {
  std::string arch = "V1NET-1L";
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t batch = 32;
  std::int64_t steps = 5000;
  std::int64_t eval_every = 200;
  std::int64_t eval_batch = 100;
  std::uint64_t seed = 0;
  int workers = 2;
  bool flips = false;
  std::int64_t timesteps = 0;  // recurrent T; 0 keeps the architecture default

  /// lr may be 0 (a no-update diagnostic run); eval_every must divide steps.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EvalPoint {
  std::int64_t step = 0;
  std::optional<double> train_loss;  // mean over the steps since the previous point; none at step 0
  double val_accuracy = 0;
  double val_loss = 0;
};

struct TrainLog {
  std::string arch;
  std::uint64_t seed = 0;
  std::int64_t param_count = 0;
  std::vector<EvalPoint> points;
  bool aborted = false;
  std::string abort_reason;
  std::int64_t completed_steps = 0;
  double wall_seconds = 0;

  double max_val_accuracy() const;
  /// Metrics without wall-clock fields.
  nlohmann::json to_json() const;
};

/// Trapezoidal area under validation accuracy over training steps, divided
/// by the step horizon. A single point at step 0 returns its accuracy.
/// Throws std::invalid_argument on an empty or non-increasing log.
double sample_efficiency(const std::vector<EvalPoint>& points);

struct EvalResult {
  double accuracy = 0;
  double loss = 0;
  std::int64_t correct = 0;
  std::int64_t count = 0;
};

/// Class 1 wins only when its logit is strictly larger.
std::vector<int> predict(Model<float>& model, const ImageSet& set, std::int64_t batch = 100);
double accuracy(std::span<const int> predictions, std::span<const int> labels);
EvalResult evaluate(Model<float>& model, const ImageSet& set, std::int64_t batch = 100);

/// Eval callback receives every point as it is recorded.
using EvalHook = std::function<void(const EvalPoint&)>;

/// Adam on softmax cross-entropy. Evaluates the full validation split at
/// step 0 and every eval_every steps. A non-finite loss stops the run with
/// log.aborted set; the checkpoint on disk stays at the last finite
/// evaluation. With an empty run_dir nothing is written.
TrainLog train(Model<float>& model, const ImageSet& train_set, const ImageSet& val_set, const TrainConfig& cfg,
               const std::filesystem::path& run_dir = {}, const nlohmann::json& provenance = {},
               const EvalHook& on_eval = {});

nlohmann::json checkpoint_meta(const Model<float>& model, const TrainConfig& cfg, std::int64_t step);
void save_model(const std::filesystem::path& path, const Model<float>& model, const nlohmann::json& meta);
/// Rebuilds the architecture from the checkpoint metadata and loads values.
Model<float> load_model(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

struct TransferResult {
  double zero_shot_accuracy = 0;
  double final_accuracy = 0;
  TrainLog finetune;
  std::vector<std::string> updated_variables;  // the optimizer's reach, from the freeze partition
  std::vector<std::string> changed_variables;  // observed value changes over the run
  bool frozen_unchanged = false;               // every other variable bit-identical

  nlohmann::json to_json() const;
};

/// Zero-shot evaluation, then fine-tuning of readout and norm parameters
/// only.
TransferResult transfer_finetune(Model<float>& model, const ImageSet& train_set, const ImageSet& val_set,
                                 const TrainConfig& cfg, const std::filesystem::path& run_dir = {},
                                 const nlohmann::json& provenance = {}, const EvalHook& on_eval = {});

/// CSV over every metrics.json below runs_dir, one row per (kind, arch,
/// dataset) group with mean and sample standard deviation across seeds.
std::string build_report(const std::filesystem::path& runs_dir);

}  // namespace contour
