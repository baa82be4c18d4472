// SPDX-License-Identifier: Apache-2.0
//
// Seeded generators and the central finite-difference gradient checker.

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mravff/ops.hpp"
#include "mravff/tensor.hpp"

namespace mravff::inline MRAVFF_ABI::testing {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }
  bool coin(double p = 0.5) { return uniform() < p; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = real(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// sum(y * r) for a fixed random r, so every output element gets a distinct
/// upstream gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  const auto r = random_tensor(rng, y.shape(), -1.0, 1.0, false);
  return sum(multiply(y, r));
}

struct GradCheckResult {
  double max_error = 0.0;  // largest per-leaf relative error
  std::size_t worst_leaf = 0;
};

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per
/// leaf, numeric from central differences with step h. `numeric_loss`
/// replaces `loss` on the finite-difference side when given.
inline GradCheckResult check_gradients(const std::vector<Tensor>& leaves,
                                       const std::function<Tensor()>& loss, double h = 1e-3,
                                       const std::function<double()>& numeric_loss = {}) {
  for (auto leaf : leaves) leaf.zero_grad();
  loss().backward();
  auto evaluate = [&] { return numeric_loss ? numeric_loss() : double(loss().item()); };

  GradCheckResult result;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Tensor leaf = leaves[i];
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    if (analytic.empty()) analytic.assign(leaf.numel(), 0.0);
    std::vector<double> numeric(leaf.numel());
    {
      NoGradGuard no_grad;
      auto data = leaf.mutable_data();
      for (std::size_t j = 0; j < data.size(); ++j) {
        const real saved = data[j];
        data[j] = real(double(saved) + h);
        const double up = evaluate();
        data[j] = real(double(saved) - h);
        const double down = evaluate();
        data[j] = saved;
        numeric[j] = (up - down) / (2.0 * h);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
      na += analytic[j] * analytic[j];
      nn += numeric[j] * numeric[j];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    const double err = std::sqrt(diff) / denom;
    if (err > result.max_error) {
      result.max_error = err;
      result.worst_leaf = i;
    }
  }
  return result;
}

}  // namespace mravff::testing
