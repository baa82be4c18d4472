// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "mravff/train.hpp"
#include "support/testing.hpp"

using namespace mravff;
using namespace mravff::train;

namespace {

struct Fixture {
  std::vector<data::Clip> clips;
  model::ModelConfig model;
};

Fixture small_problem(std::size_t videos = 4) {
  data::SyntheticSpec spec;
  spec.num_videos = videos;
  spec.d_visual = 8;
  spec.d_audio = 6;
  spec.min_duration = 30;
  spec.max_duration = 40;
  const auto synth = generate_synthetic(spec);
  Fixture f;
  for (const auto& v : synth.videos) f.clips.push_back(data::make_clip(v.annotation, v.visual, v.audio));
  f.model.d_model = 16;
  f.model.num_heads = 2;
  f.model.num_levels = 4;
  f.model.d_visual_in = 8;
  f.model.d_audio_in = 6;
  f.model.num_classes = 4;
  f.model.regression_ranges = model::default_regression_ranges(4);
  f.model.seed = 3;
  return f;
}

TrainConfig short_run(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.seed = 11;
  t.max_clip_len = 64;
  t.warmup_epochs = 1;
  return t;
}

}  // namespace

TEST_CASE("training is deterministic for a fixed seed") {
  const auto f = small_problem();
  model::FusionModel a(f.model), b(f.model);
  const auto ra = train_model(a, f.clips, short_run(3), {});
  const auto rb = train_model(b, f.clips, short_run(3), {});
  REQUIRE(ra.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ra[i].loss == rb[i].loss);
    CHECK(ra[i].lr == rb[i].lr);
  }
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& pa = a.parameters()[i].tensor;
    const auto& pb = b.parameters()[i].tensor;
    CHECK(std::equal(pa.data().begin(), pa.data().end(), pb.data().begin()));
  }
  auto other = short_run(3);
  other.seed = 12;
  model::FusionModel c(f.model);
  CHECK(train_model(c, f.clips, other, {})[2].loss != ra[2].loss);
}

TEST_CASE("loss falls over a short run and hooks fire") {
  const auto f = small_problem();
  model::FusionModel m(f.model);
  std::size_t epochs_seen = 0, checkpoints = 0, best = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    ++epochs_seen;
    CHECK(r.epoch == epochs_seen);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(r.loss_cls + r.loss_reg));
  };
  hooks.validate = [&](std::size_t epoch) -> std::optional<double> { return double(epoch % 3); };
  hooks.checkpoint = [&](std::size_t, bool is_best) {
    ++checkpoints;
    best += is_best;
  };
  auto cfg = short_run(12);
  cfg.eval_interval = 1;
  cfg.warmup_epochs = 2;
  const auto log = train_model(m, f.clips, cfg, {}, hooks);
  CHECK(epochs_seen == 12);
  CHECK(checkpoints == 12);
  CHECK(best == 2);
  CHECK(log.back().loss < log.front().loss);
  CHECK(log[0].lr < log[1].lr);
  CHECK(log.back().lr < log[1].lr);
  CHECK(log.back().val_average_map.has_value());

  std::size_t validations = 0;
  hooks.on_epoch = {};
  hooks.validate = [&](std::size_t) -> std::optional<double> {
    ++validations;
    return 0.5;
  };
  model::FusionModel quiet(f.model);
  train_model(quiet, f.clips, short_run(3), {}, hooks);
  CHECK(validations == 1);
}

TEST_CASE("invalid training settings are rejected") {
  const auto f = small_problem(1);
  model::FusionModel m(f.model);
  auto bad = short_run(1);
  bad.lr = 0;
  CHECK_THROWS_AS(train_model(m, f.clips, bad, {}), ConfigError);
  bad = short_run(1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train_model(m, f.clips, bad, {}), ConfigError);
  CHECK_THROWS_AS(train_model(m, {}, short_run(1), {}), DataError);
}

TEST_CASE("inference helpers") {
  const auto f = small_problem(2);
  const model::FusionModel m(f.model);
  const EvalConfig cfg;
  const auto pred = predict_clip(m, f.clips[0], cfg);
  REQUIRE(pred.gates.size() == 4);
  for (const auto& g : pred.gates) {
    CHECK(g.mean > 0);
    CHECK(g.mean < 1);
    CHECK(g.std >= 0);
  }
  for (std::size_t i = 0; i < pred.detections.size(); ++i) {
    CHECK(pred.detections[i].start >= 0);
    CHECK(pred.detections[i].end <= f.clips[0].duration + 1e-9);
    if (i) CHECK(pred.detections[i].score <= pred.detections[i - 1].score);
  }
  const auto gt = ground_truth(f.clips);
  CHECK(gt.size() == 2);
  CHECK(gt.at(f.clips[1].video_id).size() == f.clips[1].actions.size());
  const auto report = evaluate_model(m, f.clips, cfg);
  CHECK(report.average_map >= 0);
  CHECK(report.average_map <= 1);

  const auto silent = zero_audio(f.clips[0]);
  for (auto v : silent.audio.data()) CHECK(v == 0);
  CHECK(silent.visual.node() == f.clips[0].visual.node());
}

TEST_CASE("run config requires a seed and keeps defaults") {
  CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"d_model": 64}})"), ConfigError);
  const auto c = RunConfig::from_json(R"({"train": {"seed": 5}, "paths": {"data_root": "d"}})");
  CHECK(c.train.seed == 5);
  CHECK(c.model.seed == 5);
  CHECK(c.train.epochs == 200);
  CHECK(c.model.d_model == 128);
  auto r = c;
  r.resolve_defaults();
  CHECK(r.paths.annotations == "d/annotations.json");
  const auto back = RunConfig::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK_THROWS_AS(RunConfig::from_json("not json"), Error);
}
