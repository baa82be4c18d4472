// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks for every differentiable op and for the tiny
// end-to-end model. Only meaningful in the double-precision build.

#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mravff/loss.hpp"
#include "mravff/model.hpp"
#include "mravff/ops.hpp"
#include "support/loss_oracle.hpp"
#include "support/testing.hpp"

namespace mravff::inline MRAVFF_ABI::testing {

struct GradCase {
  std::string name;
  double error = 0.0;
};

namespace detail {

/// Values in [lo, hi] with |x| >= margin, keeping relu away from its kink.
inline Tensor away_from_zero(Rng& rng, Shape shape, double margin = 0.05) {
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(margin, 1.0);
    x = real(rng.coin() ? m : -m);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Distinct values spaced at least 0.05 apart, so max selections are stable.
inline Tensor distinct(Rng& rng, Shape shape) {
  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<real> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = real(0.1 * double(perm[i]) - 0.05 * double(n));
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace detail

/// One round of op-level checks at the given seed (h = 1e-3).
inline std::vector<GradCase> op_gradient_cases(std::uint64_t seed) {
  using detail::away_from_zero;
  using detail::distinct;
  Rng rng(seed);
  std::vector<GradCase> out;
  auto run = [&](const std::string& name, const std::vector<Tensor>& leaves,
                 const std::function<Tensor()>& f) {
    out.push_back({name, check_gradients(leaves, f).max_error});
  };
  auto pr = [&](const Tensor& y) { return probe(y, seed + 101); };

  {
    auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4});
    run("add", {a, b}, [&] { return pr(add(a, b)); });
    run("sub", {a, b}, [&] { return pr(sub(a, b)); });
    run("multiply", {a, b}, [&] { return pr(multiply(a, b)); });
    run("scale", {a}, [&] { return pr(scale(a, real(1.7))); });
    run("add_scalar", {a}, [&] { return pr(add_scalar(a, real(-0.3))); });
    run("sigmoid", {a}, [&] { return pr(sigmoid(scale(a, 3))); });
    run("softplus", {a}, [&] { return pr(softplus(scale(a, 3))); });
    run("sum", {a}, [&] { return sum(multiply(a, a)); });
    run("mean", {a}, [&] { return mean(multiply(a, a)); });
    run("reshape", {a}, [&] { return pr(reshape(a, {2, 6})); });
    run("shared_input", {a}, [&] { return pr(add(multiply(a, a), sigmoid(a))); });
  }
  {
    auto a = random_tensor(rng, {3, 5});
    std::vector<real> bv(a.numel());
    for (std::size_t i = 0; i < bv.size(); ++i) {
      bv[i] = real(double(a[i]) + (rng.coin() ? 1 : -1) * rng.uniform(0.05, 1.0));
    }
    auto b = Tensor::from({3, 5}, bv, true);
    run("maximum", {a, b}, [&] { return pr(maximum(a, b)); });
    auto r = away_from_zero(rng, {4, 6});
    run("relu", {r}, [&] { return pr(relu(r)); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4});
    run("transpose_last2", {x}, [&] { return pr(transpose_last2(x)); });
    auto p0 = random_tensor(rng, {1, 4}), p1 = random_tensor(rng, {3, 4}), p2 = random_tensor(rng, {2, 4});
    run("concat", {p0, p1, p2}, [&] {
      const std::vector<Tensor> parts{p0, p1, p2};
      return pr(concat(parts));
    });
    auto s = random_tensor(rng, {4, 7});
    run("slice_axis0", {s}, [&] { return pr(slice(s, 0, 1, 3)); });
    run("slice_axis1", {s}, [&] { return pr(slice(s, 1, 2, 6)); });
    auto w = random_tensor(rng, {7});
    run("mul_columns", {s, w}, [&] { return pr(mul_columns(s, w)); });
  }
  {
    auto a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5});
    run("matmul", {a, b}, [&] { return pr(matmul(a, b)); });
    auto ba = random_tensor(rng, {2, 3, 4}), bb = random_tensor(rng, {2, 4, 2});
    run("matmul_batched", {ba, bb}, [&] { return pr(matmul(ba, bb)); });
    run("matmul_broadcast", {ba, b}, [&] { return pr(matmul(ba, b)); });
  }
  {
    auto x = random_tensor(rng, {3, 6}, -2, 2);
    run("softmax", {x}, [&] { return pr(softmax_lastdim(x)); });
    run("softmax_masked", {x}, [&] { return pr(softmax_lastdim(x, std::size_t(4))); });
  }
  {
    auto x = random_tensor(rng, {3, 9}), w = random_tensor(rng, {4, 3, 3}), b = random_tensor(rng, {4});
    run("conv1d_k3", {x, w, b}, [&] { return pr(conv1d(x, w, b, 1, 1)); });
    run("conv1d_stride2", {x, w, b}, [&] { return pr(conv1d(x, w, b, 2, 1)); });
    auto w1 = random_tensor(rng, {2, 3, 1}), b1 = random_tensor(rng, {2});
    run("conv1d_k1", {x, w1, b1}, [&] { return pr(conv1d(x, w1, b1, 1, 0)); });
  }
  {
    auto x = distinct(rng, {3, 10});
    run("maxpool1d", {x}, [&] { return pr(maxpool1d(x, 3, 2, 1)); });
  }
  {
    auto x = random_tensor(rng, {4, 6}, -2, 2), g = random_tensor(rng, {6}, 0.5, 1.5),
         b = random_tensor(rng, {6});
    run("layer_norm", {x, g, b}, [&] { return pr(layer_norm(x, g, b)); });
    auto xc = random_tensor(rng, {6, 5}, -2, 2);
    run("layer_norm_channels", {xc, g, b}, [&] { return pr(model::layer_norm_channels(xc, g, b)); });
  }
  {
    const std::size_t d = 4;
    auto q = random_tensor(rng, {d, 5}), k = random_tensor(rng, {d, 7});
    model::AttentionWeights w{random_tensor(rng, {d, d}), random_tensor(rng, {d, d}),
                              random_tensor(rng, {d, d}), random_tensor(rng, {d, d})};
    run("cross_attention", {q, k, w.query, w.key, w.value, w.output},
        [&] { return pr(model::cross_attention(q, k, w, 2, std::size_t(5))); });
    auto fw = random_tensor(rng, {1, d, 1}), fb = random_tensor(rng, {1});
    run("gate", {q, fw, fb}, [&] { return pr(model::gate(q, fw, fb)); });
    auto px = random_tensor(rng, {d, 5}), pa = random_tensor(rng, {d, 5}),
         g = random_tensor(rng, {5}, 0.1, 0.9), uw = random_tensor(rng, {d, 2 * d, 1}),
         ub = random_tensor(rng, {d});
    run("gated_fuse", {px, pa, g, uw, ub},
        [&] { return pr(model::gated_fuse_pre_residual(px, pa, g, uw, ub)); });
    run("resample_time", {k}, [&] { return pr(model::resample_time(k, 6, 11, 9)); });
  }
  return out;
}

inline model::ModelConfig tiny_config(std::uint64_t seed) {
  model::ModelConfig c;
  c.d_model = 8;
  c.num_heads = 2;
  c.num_levels = 2;
  c.d_visual_in = 5;
  c.d_audio_in = 4;
  c.num_classes = 3;
  c.regression_ranges = model::default_regression_ranges(2);
  c.seed = seed;
  return c;
}

/// End-to-end probe check of the tiny model (T = 8) w.r.t. every parameter
/// and both inputs. The default step is 1e-5: with d_model = 8 some relu and
/// max-pool inputs sit within 1e-3 of a kink, where a wider central
/// difference straddles the switch.
inline double end_to_end_probe_error(std::uint64_t seed,
                                     model::FusionMode mode = model::FusionMode::gated,
                                     double h = 1e-5) {
  auto cfg = tiny_config(seed);
  cfg.fusion_mode = mode;
  model::FusionModel m(cfg);
  Rng rng(seed ^ 0xabcdef);
  auto visual = random_tensor(rng, {5, 8}), audio = random_tensor(rng, {4, 5});
  std::vector<Tensor> leaves{visual, audio};
  for (const auto& p : m.parameters()) leaves.push_back(p.tensor);
  auto f = [&] {
    const auto outs = m.forward(visual, audio);
    Tensor total = Tensor::scalar(0);
    for (std::size_t l = 0; l < outs.size(); ++l) {
      total = add(total, probe(outs[l].cls_logits, seed + 10 * l + 1));
      total = add(total, probe(outs[l].regression, seed + 10 * l + 2));
    }
    return total;
  };
  return check_gradients(leaves, f, h).max_error;
}

/// Training objective of the tiny model with quality weights held fixed on
/// the numeric side.
inline double end_to_end_loss_error(std::uint64_t seed, double h = 1e-5) {
  const auto cfg = tiny_config(seed);
  model::FusionModel m(cfg);
  Rng rng(seed ^ 0x123457);
  auto visual = random_tensor(rng, {5, 8}), audio = random_tensor(rng, {4, 5});
  std::vector<ActionInstance> actions;
  const double s = rng.uniform(0.0, 3.0);
  actions.push_back({s, s + rng.uniform(1.0, 4.5), rng.index(0, 2)});
  actions.push_back({rng.uniform(4.0, 5.5), 7.9, rng.index(0, 2)});

  auto targets_for = [&](const std::vector<model::LevelOutput>& outs) {
    std::vector<std::size_t> lengths;
    for (const auto& o : outs) lengths.push_back(o.valid);
    return loss::assign_targets(actions, lengths, 1.0, cfg.regression_ranges);
  };
  std::vector<double> quality;
  {
    NoGradGuard guard;
    const auto outs = m.forward(visual, audio);
    quality = reference_loss(outs, targets_for(outs)).quality;
  }
  std::vector<Tensor> leaves{visual, audio};
  for (const auto& p : m.parameters()) leaves.push_back(p.tensor);
  auto analytic = [&] {
    const auto outs = m.forward(visual, audio);
    return loss::total_loss(outs, targets_for(outs)).total;
  };
  auto numeric = [&] {
    const auto outs = m.forward(visual, audio);
    return reference_loss(outs, targets_for(outs), &quality).total;
  };
  return check_gradients(leaves, analytic, h, numeric).max_error;
}

}  // namespace mravff::testing
