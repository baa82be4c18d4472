// SPDX-License-Identifier: Apache-2.0
//
// mravff: extract-audio-features | synth | train | eval | predict

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mravff/audio.hpp"
#include "mravff/binary_io.hpp"
#include "mravff/checkpoint.hpp"
#include "mravff/data.hpp"
#include "mravff/eval.hpp"
#include "mravff/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mravff;

namespace {

enum Exit : int { kOk = 0, kValidation = 1, kData = 2, kNumeric = 3 };

std::string read_text(const std::string& path) {
  const auto bytes = bin::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::string& path, const std::string& text) {
  bin::write_file(path, std::vector<char>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// extract-audio-features

struct ExtractArgs {
  std::string in;
  std::string out;
};

data::FeatureSequence extract_one(const std::string& wav, const audio::PatchEncoder& encoder) {
  const auto emb = audio::extract_embeddings(audio::read_wav(wav), encoder);
  data::FeatureSequence seq;
  seq.length = emb.count;
  seq.dim = audio::kEmbeddingDim;
  seq.stride_seconds = emb.hop;
  seq.values = emb.values;
  return seq;
}

int cmd_extract(const ExtractArgs& a) {
  const audio::PatchEncoder encoder;
  if (!fs::is_directory(a.in)) {
    if (!fs::exists(a.in)) throw DataError("input does not exist: " + a.in);
    data::write_feature_file(a.out, extract_one(a.in, encoder));
    return kOk;
  }

  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(a.in)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  fs::create_directories(a.out);

  const std::size_t threads = std::max<std::size_t>(1, data::env_threads());
  std::vector<std::string> errors(inputs.size());
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < inputs.size(); i += threads) {
      try {
        const auto out = fs::path(a.out) / (inputs[i].stem().string() + ".mrff");
        data::write_feature_file(out.string(), extract_one(inputs[i].string(), encoder));
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::future<void>> jobs;
  for (std::size_t t = 0; t < threads; ++t) jobs.push_back(std::async(std::launch::async, work, t));
  for (auto& j : jobs) j.get();

  int failed = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (errors[i].empty()) continue;
    std::cerr << "error: " << inputs[i].string() << ": " << errors[i] << "\n";
    ++failed;
  }
  std::cout << json{{"files", inputs.size()}, {"failed", failed}}.dump() << "\n";
  return failed ? kData : kOk;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 7;
  std::optional<std::uint64_t> pattern_seed;
  std::size_t videos = 40;
  std::size_t val_videos = 0;
  double noise = 1.0;
  bool allow_overlap = false;
};

int cmd_synth(const SynthArgs& a) {
  data::SyntheticSpec spec;
  spec.num_videos = a.videos;
  spec.seed = a.seed;
  spec.pattern_seed = a.pattern_seed.value_or(a.seed);
  spec.noise_level = a.noise;
  spec.allow_overlap = a.allow_overlap;
  spec.validate();
  data::write_synthetic(a.out, data::generate_synthetic(spec));

  train::RunConfig config;
  config.train.seed = a.seed;
  config.model.seed = a.seed;
  config.model.d_visual_in = spec.d_visual;
  config.model.d_audio_in = spec.d_audio;
  config.model.num_classes = spec.classes.size();
  config.paths.data_root = a.out;
  config.paths.out_dir = (fs::path(a.out) / "run").string();
  if (a.val_videos > 0) {
    auto val = spec;
    val.num_videos = a.val_videos;
    val.seed = a.seed + 1000003;
    val.id_prefix = "val";
    const auto val_root = (fs::path(a.out) / "val").string();
    data::write_synthetic(val_root, data::generate_synthetic(val));
    config.paths.val_root = val_root;
  }
  config.resolve_defaults();
  write_text((fs::path(a.out) / "run.json").string(), config.to_json());
  std::cout << json{{"videos", a.videos}, {"val_videos", a.val_videos}, {"root", a.out}}.dump()
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Shared config handling

struct RunArgs {
  std::string config;
  std::optional<std::string> fusion_mode;
  bool no_residual = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> out_dir;
  std::optional<std::string> thresholds;
};

train::RunConfig load_run_config(const RunArgs& a) {
  auto c = train::RunConfig::from_json(read_text(a.config));
  if (a.fusion_mode) c.model.fusion_mode = model::parse_fusion_mode(*a.fusion_mode);
  if (a.no_residual) c.model.residual = false;
  if (a.seed) {
    c.train.seed = *a.seed;
    c.model.seed = *a.seed;
  }
  if (a.epochs) c.train.epochs = *a.epochs;
  if (a.out_dir) c.paths.out_dir = *a.out_dir;
  if (a.thresholds) c.eval.thresholds = eval::parse_thresholds(*a.thresholds);
  c.resolve_defaults();
  c.validate(true);
  return c;
}

std::vector<data::Clip> load_split(const train::RunConfig& c, bool val) {
  data::LoadOptions opts;
  opts.threads = data::env_threads();
  const auto ann = data::read_annotations(val ? c.paths.val_annotations : c.paths.annotations);
  return data::load_dataset(ann, val ? c.paths.val_root : c.paths.data_root, opts);
}

model::FusionModel model_from_checkpoint(const train::RunConfig& c, const std::string& path) {
  const auto contents = load_checkpoint(path);
  model::FusionModel m(c.model);
  try {
    restore_parameters(contents, m.parameters());
  } catch (const VersionError& e) {
    throw VersionError(path + " does not match the configured model: " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunArgs& a) {
  const auto c = load_run_config(a);
  const auto clips = load_split(c, false);
  const bool separate_val = c.paths.val_annotations != c.paths.annotations;
  const auto val_clips = separate_val ? load_split(c, true) : clips;

  fs::create_directories(c.paths.out_dir);
  const fs::path out(c.paths.out_dir);
  write_text((out / "config.json").string(), c.to_json());
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);

  model::FusionModel m(c.model);
  train::TrainHooks hooks;
  hooks.on_epoch = [&](const train::EpochRecord& r) {
    const auto line = train::epoch_record_json(r);
    std::cout << line << std::endl;
    log << line << "\n";
  };
  hooks.validate = [&](std::size_t) -> std::optional<double> {
    return train::evaluate_model(m, val_clips, c.eval).average_map;
  };
  hooks.checkpoint = [&](std::size_t, bool best) {
    train::save_model((out / "last.ckpt").string(), m);
    if (best) train::save_model((out / "best.ckpt").string(), m);
  };
  train::train_model(m, clips, c.train, c.loss, hooks);
  if (!fs::exists(out / "best.ckpt")) fs::copy_file(out / "last.ckpt", out / "best.ckpt");

  const auto report = train::evaluate_model(m, val_clips, c.eval);
  write_text((out / "eval_report.json").string(), report.to_json());
  std::cout << report.table(model::fusion_mode_name(c.model.fusion_mode));
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  RunArgs run;
  std::string checkpoint;
  std::string split = "val";
  std::string predictions_file;
  std::string report;
};

int cmd_eval(const EvalArgs& a) {
  const auto c = load_run_config(a.run);
  if (a.split != "train" && a.split != "val") throw ConfigError("--split must be train or val");
  const bool val = a.split == "val";

  eval::EvalReport report;
  if (!a.predictions_file.empty()) {
    const auto ann = data::read_annotations(val ? c.paths.val_annotations : c.paths.annotations);
    eval::VideoGroundTruth gt;
    for (const auto& v : ann.videos) gt[v.id] = v.actions;
    const auto dets = eval::predictions_from_json(read_text(a.predictions_file));
    report = eval::evaluate(dets, gt, c.eval.thresholds, c.model.num_classes);
  } else {
    const std::string ckpt = a.checkpoint.empty()
                                 ? (fs::path(c.paths.out_dir) / "best.ckpt").string()
                                 : a.checkpoint;
    if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt);
    const auto m = model_from_checkpoint(c, ckpt);
    report = train::evaluate_model(m, load_split(c, val), c.eval);
  }
  std::cout << report.table(model::fusion_mode_name(c.model.fusion_mode));
  const std::string path =
      a.report.empty() ? (fs::path(c.paths.out_dir) / "eval_report.json").string() : a.report;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  write_text(path, report.to_json());
  return kOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  RunArgs run;
  std::string checkpoint;
  std::string video_id;
  std::string split = "val";
  std::string out;
};

int cmd_predict(const PredictArgs& a) {
  const auto c = load_run_config(a.run);
  const bool val = a.split == "val";
  const auto ann = data::read_annotations(val ? c.paths.val_annotations : c.paths.annotations);
  const auto* video = ann.find(a.video_id);
  if (!video) throw DataError("unknown video id '" + a.video_id + "'");
  data::AnnotationSet one;
  one.labels = ann.labels;
  one.videos.push_back(*video);
  const auto clips = data::load_dataset(one, val ? c.paths.val_root : c.paths.data_root, {});

  const std::string ckpt =
      a.checkpoint.empty() ? (fs::path(c.paths.out_dir) / "best.ckpt").string() : a.checkpoint;
  const auto m = model_from_checkpoint(c, ckpt);
  const auto pred = train::predict_clip(m, clips.front(), c.eval);

  eval::VideoDetections dets;
  dets[a.video_id] = pred.detections;
  json j = json::parse(eval::predictions_to_json(dets));
  json gates = json::array();
  for (const auto& g : pred.gates) {
    gates.push_back({{"level", g.level}, {"mean_g", g.mean}, {"std_g", g.std}});
  }
  json doc{{"detections", j}, {"gate_stats", gates}};
  if (a.out.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    write_text(a.out, j.dump(2));
    std::cout << json{{"gate_stats", gates}}.dump(2) << "\n";
  }
  return kOk;
}

void add_run_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "run configuration JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--fusion-mode", a.fusion_mode, "gated | concat | pool");
  cmd->add_flag("--no-residual", a.no_residual, "drop the residual path in fusion");
  cmd->add_option("--seed", a.seed, "overrides train.seed and model.seed");
  cmd->add_option("--epochs", a.epochs);
  cmd->add_option("--out-dir", a.out_dir);
  cmd->add_option("--thresholds", a.thresholds, "lo:hi:step or comma list");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-resolution audio-visual feature fusion for temporal action localization"};
  app.require_subcommand(1);

  ExtractArgs extract;
  auto* c_extract = app.add_subcommand("extract-audio-features", "WAV -> audio embedding file(s)");
  c_extract->add_option("--in", extract.in, "WAV file or directory")->required();
  c_extract->add_option("--out", extract.out, "feature file or directory")->required();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic audio-visual dataset");
  c_synth->add_option("--out", synth.out)->required();
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--pattern-seed", synth.pattern_seed, "class pattern seed (default: --seed)");
  c_synth->add_option("--videos", synth.videos);
  c_synth->add_option("--val-videos", synth.val_videos, "also write a held-out split to <out>/val");
  c_synth->add_option("--noise", synth.noise);
  c_synth->add_flag("--allow-overlap", synth.allow_overlap);

  RunArgs train_args;
  auto* c_train = app.add_subcommand("train", "train a model");
  add_run_options(c_train, train_args);

  EvalArgs eval_args;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint or a predictions file");
  add_run_options(c_eval, eval_args.run);
  c_eval->add_option("--checkpoint", eval_args.checkpoint, "default: <out_dir>/best.ckpt");
  c_eval->add_option("--split", eval_args.split, "train | val");
  c_eval->add_option("--predictions-file", eval_args.predictions_file)->check(CLI::ExistingFile);
  c_eval->add_option("--report", eval_args.report, "default: <out_dir>/eval_report.json");

  PredictArgs predict;
  auto* c_predict = app.add_subcommand("predict", "detections and gate statistics for one video");
  add_run_options(c_predict, predict.run);
  c_predict->add_option("--checkpoint", predict.checkpoint, "default: <out_dir>/best.ckpt");
  c_predict->add_option("--video-id", predict.video_id)->required();
  c_predict->add_option("--split", predict.split, "train | val");
  c_predict->add_option("--out", predict.out, "write detections here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*c_extract) return cmd_extract(extract);
    if (*c_synth) return cmd_synth(synth);
    if (*c_train) return cmd_train(train_args);
    if (*c_eval) return cmd_eval(eval_args);
    if (*c_predict) return cmd_predict(predict);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kValidation;
}
