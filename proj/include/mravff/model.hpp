// SPDX-License-Identifier: Apache-2.0
//
// Multi-resolution audio-visual fusion network.
//
//   project_inputs  conv1d(k3) + layer norm + relu per modality -> d_model
//   build_pyramid   maxpool1d(k3, s2, p1) per modality, L levels
//   per level       P_x = xattn(visual -> audio), P_a = xattn(audio -> visual)
//                   g   = sigmoid(FC(x)) per instant
//                   F   = x + conv1d_k1([g * P_x ; (1 - g) * P_a])
//   heads           shared classification / regression towers
//
// Tensors are channel-major [channels, time]. No positional encodings are
// applied, so cross-attention is equivariant to permutations of the context.

#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mravff/tensor.hpp"

namespace mravff::inline MRAVFF_ABI::model {

enum class FusionMode { gated, concat, pool };

std::string fusion_mode_name(FusionMode mode);
/// Accepts gated|concat|pool and the long forms gated_xattn|concat_baseline|
/// channel_pool_baseline.
FusionMode parse_fusion_mode(const std::string& name);

/// Half-open range of max(d_start, d_end), in base feature-grid units.
struct RegressionRange {
  double min = 0.0;
  double max = std::numeric_limits<double>::infinity();
};

/// [0,4), [4,8), [8,16), ... with the last level open-ended.
std::vector<RegressionRange> default_regression_ranges(std::size_t levels);

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t num_levels = 6;
  std::size_t num_heads = 4;
  std::size_t d_visual_in = 2304;
  std::size_t d_audio_in = 128;
  std::size_t num_classes = 1;
  FusionMode fusion_mode = FusionMode::gated;
  bool residual = true;
  std::vector<RegressionRange> regression_ranges = default_regression_ranges(6);
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct PyramidFeatures {
  std::vector<Tensor> visual;  // [d_model, T_l]
  std::vector<Tensor> audio;   // [d_model, A_l]
  std::vector<std::size_t> valid_visual;
  std::vector<std::size_t> valid_audio;
};

struct LevelOutput {
  Tensor cls_logits;  // [C, T_l]
  Tensor regression;  // [2, T_l]: softplus (d_start, d_end) in level-grid units
  Tensor gate;        // [T_l]; undefined for the baseline fusion modes
  std::size_t valid = 0;

  std::size_t length() const { return cls_logits.dim(1); }
  real d_start(std::size_t t) const { return regression[t]; }
  real d_end(std::size_t t) const { return regression[length() + t]; }
};

struct AttentionWeights {
  Tensor query;   // [d, d], applied as x^T W
  Tensor key;     // [d, d]
  Tensor value;   // [d, d]
  Tensor output;  // [d, d], applied as W [heads]
};

/// Multi-head scaled dot-product attention of `query` [d, T_q] over
/// `context` [d, T_k]. Only the first `valid_context` keys take part.
/// When `weights_out` is given it receives the per-head attention matrices
/// [T_q, T_k].
Tensor cross_attention(const Tensor& query, const Tensor& context, const AttentionWeights& w,
                       std::size_t heads, std::optional<std::size_t> valid_context = std::nullopt,
                       std::vector<Tensor>* weights_out = nullptr);

/// g_t = sigmoid(w . x_t + b); fc_weight [1, d, 1], fc_bias [1]. Returns [T].
Tensor gate(const Tensor& x, const Tensor& fc_weight, const Tensor& fc_bias);

/// conv1d_k1([g * P_x ; (1 - g) * P_a]), i.e. the fusion output before any
/// residual term. fuse_weight [d, 2d, 1], fuse_bias [d].
Tensor gated_fuse_pre_residual(const Tensor& p_x, const Tensor& p_a, const Tensor& g,
                               const Tensor& fuse_weight, const Tensor& fuse_bias);

/// Linear interpolation along time: [C, A] -> [C, T]. The first `valid_in`
/// input columns are stretched over the first `valid_out` output columns;
/// remaining output columns are zero. Differentiable in x.
Tensor resample_time(const Tensor& x, std::size_t valid_in, std::size_t out_len,
                     std::size_t valid_out);

/// Layer norm over the channel dim of a [C, T] tensor.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta);

struct LevelTrace {
  Tensor p_x;           // [d, T_l]
  Tensor p_a;           // [d, T_l] (resampled)
  Tensor gate;          // [T_l]
  Tensor pre_residual;  // [d, T_l]
  Tensor fused;         // [d, T_l]
  std::vector<Tensor> attention_visual;  // per head [T_l, A_l]
  std::vector<Tensor> attention_audio;   // per head [A_l, T_l]
};

struct ForwardTrace {
  Tensor projected_visual;
  Tensor projected_audio;
  PyramidFeatures pyramid;
  std::vector<LevelTrace> levels;
};

class FusionModel {
 public:
  explicit FusionModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  /// Every trainable parameter in creation order.
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  /// Throws ConfigError for unknown names.
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  std::pair<Tensor, Tensor> project_inputs(const Tensor& visual, const Tensor& audio,
                                           std::size_t valid_visual = 0,
                                           std::size_t valid_audio = 0) const;
  PyramidFeatures build_pyramid(const Tensor& x0, const Tensor& a0, std::size_t valid_visual = 0,
                                std::size_t valid_audio = 0) const;

  AttentionWeights attention_weights(std::size_t level, bool visual_query) const;

  /// Fuses one pyramid level according to the configured mode.
  Tensor fuse_level(std::size_t level, const PyramidFeatures& pyramid,
                    LevelTrace* trace = nullptr) const;

  LevelOutput heads(const Tensor& fused) const;

  /// `valid_*` = 0 means the whole sequence is valid.
  std::vector<LevelOutput> forward(const Tensor& visual, const Tensor& audio,
                                   std::size_t valid_visual = 0, std::size_t valid_audio = 0,
                                   ForwardTrace* trace = nullptr) const;

  /// Largest L usable with `length` level-0 instants.
  static std::size_t max_levels(std::size_t length);

 private:
  Tensor& add_param(const std::string& name, Shape shape, real bound);
  Tensor& add_constant(const std::string& name, Shape shape, real value);
  Tensor tower(const std::string& prefix, const Tensor& x) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

}  // namespace mravff::model
