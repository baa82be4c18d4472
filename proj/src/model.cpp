// SPDX-License-Identifier: Apache-2.0

#include "mravff/model.hpp"

#include <cmath>

#include <json.hpp>

#include "mravff/ops.hpp"

namespace mravff::inline MRAVFF_ABI::model {

using json = nlohmann::json;

std::string fusion_mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::gated: return "gated";
    case FusionMode::concat: return "concat";
    case FusionMode::pool: return "pool";
  }
  return "gated";
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "gated" || name == "gated_xattn") return FusionMode::gated;
  if (name == "concat" || name == "concat_baseline") return FusionMode::concat;
  if (name == "pool" || name == "channel_pool_baseline") return FusionMode::pool;
  throw ConfigError("unknown fusion mode '" + name + "' (expected gated|concat|pool)");
}

std::vector<RegressionRange> default_regression_ranges(std::size_t levels) {
  std::vector<RegressionRange> ranges;
  double lo = 0.0, hi = 4.0;
  for (std::size_t l = 0; l < levels; ++l) {
    ranges.push_back({lo, l + 1 == levels ? std::numeric_limits<double>::infinity() : hi});
    lo = hi;
    hi *= 2.0;
  }
  return ranges;
}

void ModelConfig::validate() const {
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of " +
                      "num_heads (" + std::to_string(num_heads) + ")");
  }
  if (num_levels == 0) throw ConfigError("num_levels must be >= 1");
  if (d_visual_in == 0 || d_audio_in == 0) throw ConfigError("input dims must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
  if (regression_ranges.size() != num_levels) {
    throw ConfigError("need one regression range per level (" + std::to_string(num_levels) +
                      "), got " + std::to_string(regression_ranges.size()));
  }
  if (regression_ranges.front().min != 0.0 || !std::isinf(regression_ranges.back().max)) {
    throw ConfigError("regression ranges must start at 0 and end open-ended");
  }
  for (std::size_t l = 0; l < num_levels; ++l) {
    if (!(regression_ranges[l].min < regression_ranges[l].max)) {
      throw ConfigError("empty regression range at level " + std::to_string(l));
    }
    if (l > 0 && regression_ranges[l].min != regression_ranges[l - 1].max) {
      throw ConfigError("regression ranges must be contiguous (gap before level " +
                        std::to_string(l) + ")");
    }
  }
}

std::string ModelConfig::to_json() const {
  json ranges = json::array();
  for (const auto& r : regression_ranges) {
    ranges.push_back({r.min, std::isinf(r.max) ? json(nullptr) : json(r.max)});
  }
  json j{{"d_model", d_model},         {"num_levels", num_levels},
         {"num_heads", num_heads},     {"d_visual_in", d_visual_in},
         {"d_audio_in", d_audio_in},   {"num_classes", num_classes},
         {"fusion_mode", fusion_mode_name(fusion_mode)},
         {"residual", residual},       {"regression_ranges", ranges},
         {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.d_model = j.at("d_model").get<std::size_t>();
    c.num_levels = j.at("num_levels").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.d_visual_in = j.at("d_visual_in").get<std::size_t>();
    c.d_audio_in = j.at("d_audio_in").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
    c.residual = j.at("residual").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.regression_ranges.clear();
    for (const auto& r : j.at("regression_ranges")) {
      RegressionRange rr;
      rr.min = r.at(0).get<double>();
      rr.max = r.at(1).is_null() ? std::numeric_limits<double>::infinity() : r.at(1).get<double>();
      c.regression_ranges.push_back(rr);
    }
  } catch (const json::exception& e) {
    throw VersionError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Building blocks

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  return transpose_last2(layer_norm(transpose_last2(x), gamma, beta));
}

Tensor cross_attention(const Tensor& query, const Tensor& context, const AttentionWeights& w,
                       std::size_t heads, std::optional<std::size_t> valid_context,
                       std::vector<Tensor>* weights_out) {
  const std::size_t d = query.dim(0);
  if (context.dim(0) != d || heads == 0 || d % heads != 0) {
    throw DimensionError("cross_attention: query " + shape_str(query.shape()) + ", context " +
                         shape_str(context.shape()) + ", heads " + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const real inv_scale = real(1) / std::sqrt(real(dh));
  const Tensor q = matmul(transpose_last2(query), w.query);    // [T_q, d]
  const Tensor ctx_t = transpose_last2(context);
  const Tensor k = matmul(ctx_t, w.key);                       // [T_k, d]
  const Tensor v = matmul(ctx_t, w.value);                     // [T_k, d]
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    const Tensor scores = scale(matmul(qh, transpose_last2(kh)), inv_scale);
    const Tensor attn = softmax_lastdim(scores, valid_context);
    if (weights_out) weights_out->push_back(attn);
    per_head.push_back(transpose_last2(matmul(attn, vh)));  // [dh, T_q]
  }
  return matmul(w.output, concat(per_head));
}

Tensor gate(const Tensor& x, const Tensor& fc_weight, const Tensor& fc_bias) {
  const Tensor logits = conv1d(x, fc_weight, fc_bias, 1, 0);
  return sigmoid(reshape(logits, {logits.dim(1)}));
}

Tensor gated_fuse_pre_residual(const Tensor& p_x, const Tensor& p_a, const Tensor& g,
                               const Tensor& fuse_weight, const Tensor& fuse_bias) {
  const Tensor gated_x = mul_columns(p_x, g);
  const Tensor gated_a = mul_columns(p_a, add_scalar(scale(g, real(-1)), real(1)));
  const Tensor parts[] = {gated_x, gated_a};
  return conv1d(concat(parts), fuse_weight, fuse_bias, 1, 0);
}

Tensor resample_time(const Tensor& x, std::size_t valid_in, std::size_t out_len,
                     std::size_t valid_out) {
  const std::size_t in_len = x.dim(1);
  if (valid_in == 0 || valid_in > in_len || valid_out == 0 || valid_out > out_len) {
    throw DimensionError("resample_time: valid lengths out of range");
  }
  std::vector<real> m(in_len * out_len, real(0));
  const double ratio = double(valid_in) / double(valid_out);
  for (std::size_t t = 0; t < valid_out; ++t) {
    const double pos = std::clamp((double(t) + 0.5) * ratio - 0.5, 0.0, double(valid_in - 1));
    const auto i0 = std::size_t(pos);
    const std::size_t i1 = std::min(i0 + 1, valid_in - 1);
    const double frac = pos - double(i0);
    m[i0 * out_len + t] += real(1.0 - frac);
    m[i1 * out_len + t] += real(frac);
  }
  return matmul(x, Tensor::from({in_len, out_len}, std::move(m)));
}

// ---------------------------------------------------------------------------
// Model

FusionModel::FusionModel(ModelConfig config) : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const auto conv_bound = [](std::size_t cin, std::size_t k) {
    return real(1) / std::sqrt(real(cin * k));
  };

  // Projection parameters come first so every fusion mode draws them from the
  // same prefix of the seeded stream.
  for (const auto& [name, din] :
       {std::pair<std::string, std::size_t>{"visual", config_.d_visual_in},
        std::pair<std::string, std::size_t>{"audio", config_.d_audio_in}}) {
    add_param("proj." + name + ".conv.weight", {d, din, 3}, conv_bound(din, 3));
    add_constant("proj." + name + ".conv.bias", {d}, 0);
    add_constant("proj." + name + ".norm.gamma", {d}, 1);
    add_constant("proj." + name + ".norm.beta", {d}, 0);
  }

  for (std::size_t l = 0; l < config_.num_levels; ++l) {
    const std::string p = "level" + std::to_string(l) + ".";
    switch (config_.fusion_mode) {
      case FusionMode::gated:
        for (const char* dir : {"xattn_visual", "xattn_audio"}) {
          for (const char* m : {"query", "key", "value", "output"}) {
            add_param(p + dir + "." + m, {d, d}, conv_bound(d, 1));
          }
        }
        add_param(p + "gate.fc.weight", {1, d, 1}, conv_bound(d, 1));
        add_constant(p + "gate.fc.bias", {1}, 0);
        add_param(p + "fuse.conv.weight", {d, 2 * d, 1}, conv_bound(2 * d, 1));
        add_constant(p + "fuse.conv.bias", {d}, 0);
        break;
      case FusionMode::concat:
        add_param(p + "concat.conv.weight", {d, 2 * d, 1}, conv_bound(2 * d, 1));
        add_constant(p + "concat.conv.bias", {d}, 0);
        break;
      case FusionMode::pool:
        break;
    }
  }

  for (const char* tower_name : {"cls", "reg"}) {
    const std::string p = std::string("head.") + tower_name + ".";
    for (int i = 0; i < 3; ++i) {
      const std::string b = p + std::to_string(i) + ".";
      add_param(b + "conv.weight", {d, d, 3}, conv_bound(d, 3));
      add_constant(b + "conv.bias", {d}, 0);
      add_constant(b + "norm.gamma", {d}, 1);
      add_constant(b + "norm.beta", {d}, 0);
    }
    const std::size_t out = std::string(tower_name) == "cls" ? config_.num_classes : 2;
    add_param(p + "out.weight", {out, d, 3}, conv_bound(d, 3));
    add_constant(p + "out.bias", {out}, 0);
  }
}

Tensor& FusionModel::add_param(const std::string& name, Shape shape, real bound) {
  std::uniform_real_distribution<double> dist(-double(bound), double(bound));
  std::vector<real> values(shape_numel(shape));
  for (auto& v : values) v = real(dist(rng_));
  index_[name] = params_.size();
  params_.push_back({name, Tensor::from(std::move(shape), std::move(values), true)});
  return params_.back().tensor;
}

Tensor& FusionModel::add_constant(const std::string& name, Shape shape, real value) {
  index_[name] = params_.size();
  params_.push_back({name, Tensor::full(std::move(shape), value, true)});
  return params_.back().tensor;
}

Tensor& FusionModel::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return params_[it->second].tensor;
}

const Tensor& FusionModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return params_[it->second].tensor;
}

std::size_t FusionModel::max_levels(std::size_t length) {
  std::size_t levels = 0;
  while (length >= (std::size_t(1) << levels)) ++levels;
  return levels;
}

namespace {

// Zeroes time steps at or beyond `valid` so padded values never reach the
// network.
Tensor mask_time(const Tensor& x, std::size_t valid) {
  const std::size_t len = x.dim(1);
  if (valid >= len) return x;
  std::vector<real> m(x.numel(), real(1));
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    for (std::size_t t = valid; t < len; ++t) m[c * len + t] = 0;
  }
  return multiply(x, Tensor::from(x.shape(), std::move(m)));
}

std::size_t resolve_valid(std::size_t valid, std::size_t len) {
  if (valid == 0) return len;
  if (valid > len) {
    throw DimensionError("valid length " + std::to_string(valid) + " exceeds sequence length " +
                         std::to_string(len));
  }
  return valid;
}

}  // namespace

std::pair<Tensor, Tensor> FusionModel::project_inputs(const Tensor& visual, const Tensor& audio,
                                                      std::size_t valid_visual,
                                                      std::size_t valid_audio) const {
  if (visual.rank() != 2 || visual.dim(0) != config_.d_visual_in) {
    throw DimensionError("visual input " + shape_str(visual.shape()) + " does not match d_visual_in " +
                         std::to_string(config_.d_visual_in));
  }
  if (audio.rank() != 2 || audio.dim(0) != config_.d_audio_in) {
    throw DimensionError("audio input " + shape_str(audio.shape()) + " does not match d_audio_in " +
                         std::to_string(config_.d_audio_in));
  }
  auto project = [this](const std::string& name, const Tensor& x, std::size_t valid) {
    const std::string p = "proj." + name + ".";
    const Tensor h = conv1d(mask_time(x, valid), param(p + "conv.weight"), param(p + "conv.bias"), 1, 1);
    return relu(layer_norm_channels(h, param(p + "norm.gamma"), param(p + "norm.beta")));
  };
  return {project("visual", visual, resolve_valid(valid_visual, visual.dim(1))),
          project("audio", audio, resolve_valid(valid_audio, audio.dim(1)))};
}

PyramidFeatures FusionModel::build_pyramid(const Tensor& x0, const Tensor& a0,
                                           std::size_t valid_visual,
                                           std::size_t valid_audio) const {
  const std::size_t levels = config_.num_levels;
  std::size_t vv = resolve_valid(valid_visual, x0.dim(1));
  std::size_t va = resolve_valid(valid_audio, a0.dim(1));
  if (vv < (std::size_t(1) << (levels - 1))) {
    throw ConfigError("sequence of " + std::to_string(vv) + " instants is too short for " +
                      std::to_string(levels) + " pyramid levels; max feasible L = " +
                      std::to_string(max_levels(vv)));
  }
  PyramidFeatures pyr;
  pyr.visual.push_back(x0);
  pyr.audio.push_back(a0);
  pyr.valid_visual.push_back(vv);
  pyr.valid_audio.push_back(va);
  for (std::size_t l = 1; l < levels; ++l) {
    pyr.visual.push_back(maxpool1d(pyr.visual.back(), 3, 2, 1));
    pyr.audio.push_back(maxpool1d(pyr.audio.back(), 3, 2, 1));
    vv = (vv + 1) / 2;
    va = (va + 1) / 2;
    pyr.valid_visual.push_back(vv);
    pyr.valid_audio.push_back(std::max<std::size_t>(va, 1));
  }
  return pyr;
}

AttentionWeights FusionModel::attention_weights(std::size_t level, bool visual_query) const {
  const std::string p =
      "level" + std::to_string(level) + (visual_query ? ".xattn_visual." : ".xattn_audio.");
  return {param(p + "query"), param(p + "key"), param(p + "value"), param(p + "output")};
}

Tensor FusionModel::fuse_level(std::size_t level, const PyramidFeatures& pyr,
                               LevelTrace* trace) const {
  const Tensor& x = pyr.visual[level];
  const Tensor& a = pyr.audio[level];
  const std::size_t vt = pyr.valid_visual[level], va = pyr.valid_audio[level];
  const std::string p = "level" + std::to_string(level) + ".";

  switch (config_.fusion_mode) {
    case FusionMode::gated: {
      std::vector<Tensor>* wv = trace ? &trace->attention_visual : nullptr;
      std::vector<Tensor>* wa = trace ? &trace->attention_audio : nullptr;
      const Tensor p_x = cross_attention(x, a, attention_weights(level, true), config_.num_heads, va, wv);
      const Tensor p_a_native =
          cross_attention(a, x, attention_weights(level, false), config_.num_heads, vt, wa);
      const Tensor p_a = resample_time(p_a_native, va, x.dim(1), vt);
      const Tensor g = gate(x, param(p + "gate.fc.weight"), param(p + "gate.fc.bias"));
      const Tensor pre = gated_fuse_pre_residual(p_x, p_a, g, param(p + "fuse.conv.weight"),
                                                 param(p + "fuse.conv.bias"));
      Tensor fused = config_.residual ? add(x, pre) : pre;
      if (trace) {
        trace->p_x = p_x;
        trace->p_a = p_a;
        trace->gate = g;
        trace->pre_residual = pre;
        trace->fused = fused;
      }
      return fused;
    }
    case FusionMode::concat: {
      const Tensor parts[] = {x, resample_time(a, va, x.dim(1), vt)};
      Tensor fused = conv1d(concat(parts), param(p + "concat.conv.weight"),
                            param(p + "concat.conv.bias"), 1, 0);
      if (trace) trace->fused = fused;
      return fused;
    }
    case FusionMode::pool: {
      Tensor fused = maximum(x, resample_time(a, va, x.dim(1), vt));
      if (trace) trace->fused = fused;
      return fused;
    }
  }
  throw ConfigError("unhandled fusion mode");
}

Tensor FusionModel::tower(const std::string& prefix, const Tensor& x) const {
  Tensor h = x;
  for (int i = 0; i < 3; ++i) {
    const std::string b = prefix + std::to_string(i) + ".";
    h = conv1d(h, param(b + "conv.weight"), param(b + "conv.bias"), 1, 1);
    h = relu(layer_norm_channels(h, param(b + "norm.gamma"), param(b + "norm.beta")));
  }
  return h;
}

LevelOutput FusionModel::heads(const Tensor& fused) const {
  LevelOutput out;
  out.cls_logits =
      conv1d(tower("head.cls.", fused), param("head.cls.out.weight"), param("head.cls.out.bias"), 1, 1);
  out.regression = softplus(
      conv1d(tower("head.reg.", fused), param("head.reg.out.weight"), param("head.reg.out.bias"), 1, 1));
  out.valid = fused.dim(1);
  return out;
}

std::vector<LevelOutput> FusionModel::forward(const Tensor& visual, const Tensor& audio,
                                              std::size_t valid_visual, std::size_t valid_audio,
                                              ForwardTrace* trace) const {
  const std::size_t vv = resolve_valid(valid_visual, visual.dim(1));
  const std::size_t va = resolve_valid(valid_audio, audio.dim(1));
  const auto [x0, a0] = project_inputs(visual, audio, vv, va);
  PyramidFeatures pyr = build_pyramid(x0, a0, vv, va);
  std::vector<LevelOutput> outputs;
  if (trace) {
    trace->projected_visual = x0;
    trace->projected_audio = a0;
    trace->levels.assign(config_.num_levels, {});
  }
  for (std::size_t l = 0; l < config_.num_levels; ++l) {
    LevelTrace level_trace;
    const Tensor fused = fuse_level(l, pyr, &level_trace);
    LevelOutput out = heads(fused);
    out.valid = pyr.valid_visual[l];
    out.gate = level_trace.gate;
    if (trace) trace->levels[l] = std::move(level_trace);
    outputs.push_back(std::move(out));
  }
  if (trace) trace->pyramid = std::move(pyr);
  return outputs;
}

}  // namespace mravff::model
