// SPDX-License-Identifier: Apache-2.0
//
// Run configuration, the training loop, and model-level inference helpers
// shared by the CLI and the acceptance suite.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mravff/data.hpp"
#include "mravff/eval.hpp"
#include "mravff/loss.hpp"
#include "mravff/model.hpp"

namespace mravff::inline MRAVFF_ABI::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::size_t max_clip_len = 256;
  double grad_clip = 1.0;         // global L2 norm; 0 disables
  bool cosine_schedule = true;
  std::size_t warmup_epochs = 5;
  std::size_t eval_interval = 0;  // 0: evaluate only after the last epoch
};

struct EvalConfig {
  std::vector<double> thresholds = eval::default_thresholds();
  double score_threshold = 0.001;
  std::size_t pre_nms_topk = 2000;
  eval::SoftNmsOptions soft_nms;
};

struct PathsConfig {
  std::string data_root;
  std::string annotations;      // default: <data_root>/annotations.json
  std::string val_root;         // default: data_root
  std::string val_annotations;  // default: annotations of val_root
  std::string out_dir = "run";
};

struct RunConfig {
  model::ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;
  loss::LossOptions loss;

  /// Fills path defaults and checks every field; `check_paths` also requires
  /// referenced inputs to exist.
  void validate(bool check_paths) const;
  void resolve_defaults();
  std::string to_json() const;
  /// Keys absent from the document keep their defaults, except train.seed,
  /// which is mandatory.
  static RunConfig from_json(const std::string& text);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double loss_cls = 0.0;
  double loss_reg = 0.0;
  std::size_t n_pos = 0;
  double lr = 0.0;
  std::optional<double> val_average_map;
};

std::string epoch_record_json(const EpochRecord& r);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after each epoch; return a validation mAP to track the best model.
  std::function<std::optional<double>(std::size_t epoch)> validate;
  /// Called with the epoch number and whether it is the best so far.
  std::function<void(std::size_t epoch, bool best)> checkpoint;
};

/// Runs the full optimization loop. Deterministic for a fixed seed.
/// NumericError is rethrown with the offending epoch/batch/video ids.
std::vector<EpochRecord> train_model(model::FusionModel& model,
                                     const std::vector<data::Clip>& clips,
                                     const TrainConfig& config, const loss::LossOptions& loss_options,
                                     const TrainHooks& hooks = {});

/// Loss of one clip (graph recorded when grad mode is on).
loss::LossResult clip_loss(const model::FusionModel& model, const data::Clip& clip,
                           const loss::LossOptions& options);

struct GateStats {
  std::size_t level = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct Prediction {
  std::vector<Detection> detections;  // absolute video time, score-descending
  std::vector<GateStats> gates;
};

Prediction predict_clip(const model::FusionModel& model, const data::Clip& clip,
                        const EvalConfig& config);

eval::VideoGroundTruth ground_truth(const std::vector<data::Clip>& clips);

eval::VideoDetections predict_all(const model::FusionModel& model,
                                  const std::vector<data::Clip>& clips, const EvalConfig& config);

eval::EvalReport evaluate_model(const model::FusionModel& model,
                                const std::vector<data::Clip>& clips, const EvalConfig& config);

/// Copy of `clip` with every audio value set to zero.
data::Clip zero_audio(const data::Clip& clip);

void save_model(const std::string& path, const model::FusionModel& model);
model::FusionModel load_model(const std::string& path);

}  // namespace mravff::train
