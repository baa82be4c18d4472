// SPDX-License-Identifier: Apache-2.0

#include "mravff/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <json.hpp>

#include "mravff/checkpoint.hpp"
#include "mravff/ops.hpp"
#include "mravff/optim.hpp"

namespace mravff::inline MRAVFF_ABI::train {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::resolve_defaults() {
  if (paths.annotations.empty() && !paths.data_root.empty()) {
    paths.annotations = (fs::path(paths.data_root) / "annotations.json").string();
  }
  if (paths.val_root.empty()) paths.val_root = paths.data_root;
  if (paths.val_annotations.empty() && !paths.val_root.empty()) {
    paths.val_annotations = paths.val_root == paths.data_root
                                ? paths.annotations
                                : (fs::path(paths.val_root) / "annotations.json").string();
  }
  if (model.regression_ranges.size() != model.num_levels) {
    model.regression_ranges = model::default_regression_ranges(model.num_levels);
  }
}

void RunConfig::validate(bool check_paths) const {
  model.validate();
  if (train.epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be positive");
  if (train.weight_decay < 0) throw ConfigError("train.weight_decay must be nonnegative");
  if (train.max_clip_len != 0 && train.max_clip_len < (std::size_t(1) << (model.num_levels - 1))) {
    throw ConfigError("train.max_clip_len too short for " + std::to_string(model.num_levels) +
                      " levels");
  }
  if (eval.thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  if (!(eval.score_threshold > 0 && eval.score_threshold < 1)) {
    throw ConfigError("eval.score_threshold must lie in (0, 1)");
  }
  if (!(eval.soft_nms.sigma > 0) || eval.soft_nms.max_keep == 0) {
    throw ConfigError("eval.soft_nms needs sigma > 0 and max_keep >= 1");
  }
  if (check_paths) {
    for (const auto& p : {paths.data_root, paths.annotations, paths.val_root, paths.val_annotations}) {
      if (p.empty() || !fs::exists(p)) throw ConfigError("path does not exist: '" + p + "'");
    }
  }
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = json::parse(model.to_json());
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"weight_decay", train.weight_decay},
                {"seed", train.seed},
                {"max_clip_len", train.max_clip_len},
                {"grad_clip", train.grad_clip},
                {"schedule", train.cosine_schedule ? "cosine" : "constant"},
                {"warmup_epochs", train.warmup_epochs},
                {"eval_interval", train.eval_interval}};
  j["eval"] = {{"thresholds", eval.thresholds},
               {"score_threshold", eval.score_threshold},
               {"pre_nms_topk", eval.pre_nms_topk},
               {"soft_nms",
                {{"sigma", eval.soft_nms.sigma},
                 {"min_score", eval.soft_nms.min_score},
                 {"max_keep", eval.soft_nms.max_keep}}}};
  j["paths"] = {{"data_root", paths.data_root},
                {"annotations", paths.annotations},
                {"val_root", paths.val_root},
                {"val_annotations", paths.val_annotations},
                {"out_dir", paths.out_dir}};
  j["loss"] = {{"alpha", loss.focal.alpha}, {"gamma", loss.focal.gamma}};
  return j.dump(2);
}

namespace {
template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    if (!j.contains("train") || !j.at("train").contains("seed")) {
      throw ConfigError("run config must set train.seed");
    }
    const json& t = j.at("train");
    take(t, "epochs", c.train.epochs);
    take(t, "batch_size", c.train.batch_size);
    take(t, "lr", c.train.lr);
    take(t, "weight_decay", c.train.weight_decay);
    take(t, "seed", c.train.seed);
    take(t, "max_clip_len", c.train.max_clip_len);
    take(t, "grad_clip", c.train.grad_clip);
    take(t, "warmup_epochs", c.train.warmup_epochs);
    take(t, "eval_interval", c.train.eval_interval);
    if (t.contains("schedule")) {
      const auto s = t.at("schedule").get<std::string>();
      if (s != "cosine" && s != "constant") throw ConfigError("train.schedule must be cosine|constant");
      c.train.cosine_schedule = s == "cosine";
    }

    c.model.seed = c.train.seed;
    if (j.contains("model")) {
      const json& m = j.at("model");
      take(m, "d_model", c.model.d_model);
      take(m, "num_levels", c.model.num_levels);
      take(m, "num_heads", c.model.num_heads);
      take(m, "d_visual_in", c.model.d_visual_in);
      take(m, "d_audio_in", c.model.d_audio_in);
      take(m, "num_classes", c.model.num_classes);
      take(m, "residual", c.model.residual);
      take(m, "seed", c.model.seed);
      if (m.contains("fusion_mode")) {
        c.model.fusion_mode = model::parse_fusion_mode(m.at("fusion_mode").get<std::string>());
      }
      if (m.contains("regression_ranges")) {
        c.model.regression_ranges.clear();
        for (const auto& r : m.at("regression_ranges")) {
          model::RegressionRange rr;
          rr.min = r.at(0).get<double>();
          rr.max = r.at(1).is_null() ? std::numeric_limits<double>::infinity() : r.at(1).get<double>();
          c.model.regression_ranges.push_back(rr);
        }
      } else {
        c.model.regression_ranges = model::default_regression_ranges(c.model.num_levels);
      }
    }

    if (j.contains("eval")) {
      const json& e = j.at("eval");
      if (e.contains("thresholds")) {
        const auto& th = e.at("thresholds");
        c.eval.thresholds = th.is_string() ? eval::parse_thresholds(th.get<std::string>())
                                           : th.get<std::vector<double>>();
      }
      take(e, "score_threshold", c.eval.score_threshold);
      take(e, "pre_nms_topk", c.eval.pre_nms_topk);
      if (e.contains("soft_nms")) {
        const json& s = e.at("soft_nms");
        take(s, "sigma", c.eval.soft_nms.sigma);
        take(s, "min_score", c.eval.soft_nms.min_score);
        take(s, "max_keep", c.eval.soft_nms.max_keep);
      }
    }
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      take(p, "data_root", c.paths.data_root);
      take(p, "annotations", c.paths.annotations);
      take(p, "val_root", c.paths.val_root);
      take(p, "val_annotations", c.paths.val_annotations);
      take(p, "out_dir", c.paths.out_dir);
    }
    if (j.contains("loss")) {
      take(j.at("loss"), "alpha", c.loss.focal.alpha);
      take(j.at("loss"), "gamma", c.loss.focal.gamma);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

std::string epoch_record_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch},       {"loss", r.loss}, {"loss_cls", r.loss_cls},
         {"loss_reg", r.loss_reg}, {"n_pos", r.n_pos}, {"lr", r.lr}};
  if (r.val_average_map) j["val_avg_map"] = *r.val_average_map;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training

loss::LossResult clip_loss(const model::FusionModel& model, const data::Clip& clip,
                           const loss::LossOptions& options) {
  const auto outputs = model.forward(clip.visual, clip.audio, clip.valid_visual, clip.valid_audio);
  std::vector<std::size_t> lengths;
  for (const auto& o : outputs) lengths.push_back(o.valid);
  const auto targets = loss::assign_targets(clip.actions, lengths, clip.visual_stride,
                                            model.config().regression_ranges);
  return loss::total_loss(outputs, targets, options);
}

namespace {

double schedule_lr(const TrainConfig& c, std::size_t step, std::size_t total_steps,
                   std::size_t steps_per_epoch) {
  const std::size_t warmup = c.warmup_epochs * steps_per_epoch;
  if (warmup > 0 && step < warmup) return c.lr * double(step + 1) / double(warmup);
  if (!c.cosine_schedule) return c.lr;
  const double progress =
      double(step - warmup) / double(std::max<std::size_t>(1, total_steps - warmup));
  // Floor at 1% of the base rate; AdamW rejects a zero learning rate.
  return c.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void clip_gradients(std::vector<Parameter>& params, double max_norm) {
  if (!(max_norm > 0)) return;
  double sq = 0.0;
  for (const auto& p : params) {
    for (real g : p.tensor.grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm <= max_norm) return;
  const real factor = real(max_norm / norm);
  for (auto& p : params) {
    for (auto& g : p.tensor.mutable_grad()) g *= factor;
  }
}

}  // namespace

std::vector<EpochRecord> train_model(model::FusionModel& model,
                                     const std::vector<data::Clip>& clips,
                                     const TrainConfig& config, const loss::LossOptions& loss_options,
                                     const TrainHooks& hooks) {
  if (clips.empty()) throw DataError("training set is empty");
  if (config.epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (config.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(config.lr > 0)) throw ConfigError("train.lr must be positive");
  auto& params = model.parameters();
  AdamWOptions opt;
  opt.lr = real(config.lr);
  opt.weight_decay = real(config.weight_decay);
  AdamW optimizer(params, opt);

  const std::size_t steps_per_epoch = (clips.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  std::mt19937_64 rng(config.seed ^ 0x7472616eULL);
  std::vector<std::size_t> order(clips.size());
  std::vector<EpochRecord> history;
  std::optional<double> best_map;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      const real inv_batch = real(1) / real(end - begin);
      optimizer.zero_grad();
      std::string batch_ids;
      try {
        for (std::size_t k = begin; k < end; ++k) {
          const data::Clip* clip = &clips[order[k]];
          batch_ids += (batch_ids.empty() ? "" : ",") + clip->video_id;
          data::Clip cropped;
          if (config.max_clip_len > 0 && clip->valid_visual > config.max_clip_len) {
            std::uniform_int_distribution<std::size_t> pick(
                0, clip->valid_visual - config.max_clip_len);
            cropped = data::crop_clip(*clip, pick(rng), config.max_clip_len);
            clip = &cropped;
          }
          const auto result = clip_loss(model, *clip, loss_options);
          scale(result.total, inv_batch).backward();
          rec.loss += double(result.total.item());
          rec.loss_cls += result.cls;
          rec.loss_reg += result.reg;
          rec.n_pos += result.n_pos;
        }
        clip_gradients(params, config.grad_clip);
        optimizer.set_lr(real(schedule_lr(config, step, total_steps, steps_per_epoch)));
        optimizer.step();
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " [epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b) + ", videos " + batch_ids + "]");
      }
    }
    const double n = double(clips.size());
    rec.loss /= n;
    rec.loss_cls /= n;
    rec.loss_reg /= n;
    rec.lr = double(optimizer.options().lr);
    if (!std::isfinite(rec.loss)) {
      throw NumericError("non-finite epoch loss at epoch " + std::to_string(epoch));
    }
    const bool do_eval = (config.eval_interval > 0 && epoch % config.eval_interval == 0) ||
                         epoch == config.epochs;
    bool is_best = false;
    if (do_eval && hooks.validate) {
      rec.val_average_map = hooks.validate(epoch);
      if (rec.val_average_map && (!best_map || *rec.val_average_map > *best_map)) {
        best_map = rec.val_average_map;
        is_best = true;
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (hooks.checkpoint) hooks.checkpoint(epoch, is_best);
    history.push_back(rec);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Inference

Prediction predict_clip(const model::FusionModel& model, const data::Clip& clip,
                        const EvalConfig& config) {
  NoGradGuard no_grad;
  const auto outputs = model.forward(clip.visual, clip.audio, clip.valid_visual, clip.valid_audio);
  eval::DecodeOptions decode;
  decode.stride_seconds = clip.visual_stride;
  decode.clip_duration = clip.duration;
  decode.score_threshold = config.score_threshold;
  decode.pre_nms_topk = config.pre_nms_topk;
  Prediction pred;
  pred.detections = eval::soft_nms(eval::decode_segments(outputs, decode), config.soft_nms);
  for (auto& d : pred.detections) {
    d.start += clip.offset;
    d.end += clip.offset;
  }
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const auto& g = outputs[l].gate;
    if (!g.defined()) continue;
    GateStats s;
    s.level = l;
    const std::size_t n = outputs[l].valid;
    for (std::size_t t = 0; t < n; ++t) s.mean += double(g[t]);
    s.mean /= double(n);
    for (std::size_t t = 0; t < n; ++t) s.std += (double(g[t]) - s.mean) * (double(g[t]) - s.mean);
    s.std = std::sqrt(s.std / double(n));
    pred.gates.push_back(s);
  }
  return pred;
}

eval::VideoGroundTruth ground_truth(const std::vector<data::Clip>& clips) {
  eval::VideoGroundTruth gt;
  for (const auto& c : clips) {
    auto& list = gt[c.video_id];
    for (auto a : c.actions) {
      a.start += c.offset;
      a.end += c.offset;
      list.push_back(a);
    }
  }
  return gt;
}

eval::VideoDetections predict_all(const model::FusionModel& model,
                                  const std::vector<data::Clip>& clips, const EvalConfig& config) {
  eval::VideoDetections dets;
  for (const auto& c : clips) {
    auto pred = predict_clip(model, c, config);
    auto& list = dets[c.video_id];
    list.insert(list.end(), pred.detections.begin(), pred.detections.end());
  }
  return dets;
}

eval::EvalReport evaluate_model(const model::FusionModel& model,
                                const std::vector<data::Clip>& clips, const EvalConfig& config) {
  return eval::evaluate(predict_all(model, clips, config), ground_truth(clips), config.thresholds,
                        model.config().num_classes);
}

data::Clip zero_audio(const data::Clip& clip) {
  data::Clip out = clip;
  out.audio = Tensor::zeros(clip.audio.shape());
  return out;
}

void save_model(const std::string& path, const model::FusionModel& model) {
  save_checkpoint(path, model.parameters(), model.config().to_json());
}

model::FusionModel load_model(const std::string& path) {
  const auto contents = load_checkpoint(path);
  model::FusionModel m(model::ModelConfig::from_json(contents.config_json));
  restore_parameters(contents, m.parameters());
  return m;
}

}  // namespace mravff::train
