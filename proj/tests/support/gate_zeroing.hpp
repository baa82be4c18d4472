// SPDX-License-Identifier: Apache-2.0
//
// Gate-zeroing probes. The gate bias of every level is forced to +-20 with
// zero gate weights, and one attention path at a time is perturbed through
// its query input while the other path is held fixed.

#pragma once

#include <algorithm>
#include <cmath>

#include "mravff/model.hpp"
#include "mravff/ops.hpp"
#include "support/testing.hpp"

namespace mravff::inline MRAVFF_ABI::testing {

struct GateZeroingResult {
  double min_gate = 1.0;
  double max_gate = 0.0;
  /// Largest change of the pre-residual fused feature caused by perturbing
  /// the suppressed path.
  double suppressed_change = 0.0;
  /// Same perturbation with the gate left at 0.5, for scale.
  double control_change = 0.0;
};

inline model::ModelConfig gate_probe_config(std::uint64_t seed) {
  model::ModelConfig c;
  c.d_model = 16;
  c.num_heads = 4;
  c.num_levels = 3;
  c.d_visual_in = 12;
  c.d_audio_in = 10;
  c.num_classes = 2;
  c.regression_ranges = model::default_regression_ranges(3);
  c.seed = seed;
  return c;
}

namespace detail {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline Tensor perturbed(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return add(x, random_tensor(rng, x.shape(), -0.5, 0.5, false));
}

}  // namespace detail

/// `bias` > 0 drives g to 1 and perturbs the audio-query path (P_a);
/// `bias` < 0 drives g to 0 and perturbs the visual-query path (P_x).
inline GateZeroingResult gate_zeroing_probe(std::uint64_t seed, double bias) {
  NoGradGuard no_grad;
  const auto cfg = gate_probe_config(seed);
  model::FusionModel m(cfg);
  Rng rng(seed * 7919 + 1);
  const auto visual = random_tensor(rng, {cfg.d_visual_in, 24}, -1, 1, false);
  const auto audio = random_tensor(rng, {cfg.d_audio_in, 11}, -1, 1, false);

  GateZeroingResult r;
  for (double b : {bias, 0.0}) {
    for (std::size_t l = 0; l < cfg.num_levels; ++l) {
      const std::string p = "level" + std::to_string(l) + ".";
      for (auto& w : m.param(p + "gate.fc.weight").mutable_data()) w = 0;
      m.param(p + "gate.fc.bias").mutable_data()[0] = real(b);
    }
    model::ForwardTrace trace;
    m.forward(visual, audio, 0, 0, &trace);
    for (std::size_t l = 0; l < cfg.num_levels; ++l) {
      const auto& lt = trace.levels[l];
      const auto& x = trace.pyramid.visual[l];
      const auto& a = trace.pyramid.audio[l];
      const std::size_t vt = trace.pyramid.valid_visual[l], va = trace.pyramid.valid_audio[l];
      Tensor p_x = lt.p_x, p_a = lt.p_a;
      if (bias < 0) {
        p_x = model::cross_attention(detail::perturbed(x, seed + l), a, m.attention_weights(l, true),
                                     cfg.num_heads, va);
      } else {
        p_a = model::resample_time(
            model::cross_attention(detail::perturbed(a, seed + l), x, m.attention_weights(l, false),
                                   cfg.num_heads, vt),
            va, x.dim(1), vt);
      }
      const std::string p = "level" + std::to_string(l) + ".";
      const auto pre = model::gated_fuse_pre_residual(p_x, p_a, lt.gate, m.param(p + "fuse.conv.weight"),
                                                      m.param(p + "fuse.conv.bias"));
      const double change = detail::max_abs_diff(pre, lt.pre_residual);
      if (b == bias) {
        r.suppressed_change = std::max(r.suppressed_change, change);
        for (auto g : lt.gate.data()) {
          r.min_gate = std::min(r.min_gate, double(g));
          r.max_gate = std::max(r.max_gate, double(g));
        }
      } else {
        r.control_change = std::max(r.control_change, change);
      }
    }
  }
  return r;
}

/// With g exactly 0 (or 1) the gated path contributes nothing: perturbing it
/// leaves the pre-residual feature bitwise unchanged. Returns the largest
/// change over both cases.
inline double exact_gate_change(std::uint64_t seed) {
  NoGradGuard no_grad;
  Rng rng(seed);
  const std::size_t d = 6, t = 9;
  const auto p_x = random_tensor(rng, {d, t}, -1, 1, false);
  const auto p_a = random_tensor(rng, {d, t}, -1, 1, false);
  const auto w = random_tensor(rng, {d, 2 * d, 1}, -1, 1, false);
  const auto b = random_tensor(rng, {d}, -1, 1, false);
  double worst = 0.0;
  for (real gv : {real(0), real(1)}) {
    std::vector<real> g(t);
    for (std::size_t i = 0; i < t; ++i) g[i] = (i % 2) ? gv : real(0.5);
    const auto gate = Tensor::from({t}, g);
    const auto base = model::gated_fuse_pre_residual(p_x, p_a, gate, w, b);
    const auto moved = gv == 0 ? model::gated_fuse_pre_residual(detail::perturbed(p_x, seed), p_a, gate, w, b)
                               : model::gated_fuse_pre_residual(p_x, detail::perturbed(p_a, seed), gate, w, b);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t i = 1; i < t; i += 2) {
        worst = std::max(worst, std::abs(double(moved[c * t + i]) - double(base[c * t + i])));
      }
    }
  }
  return worst;
}

}  // namespace mravff::testing
