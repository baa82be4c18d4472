// SPDX-License-Identifier: Apache-2.0

#include "mravff/optim.hpp"

#include <cmath>

namespace mravff::inline MRAVFF_ABI {

namespace {
void check_options(const AdamWOptions& o) {
  if (!(o.lr > 0)) throw ConfigError("AdamW learning rate must be positive");
  if (!(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(o.eps > 0) || o.weight_decay < 0) throw ConfigError("AdamW eps/weight_decay out of range");
}
}  // namespace

AdamW::AdamW(std::vector<Parameter> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  check_options(options_);
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), real(0));
    v_.emplace_back(p.tensor.numel(), real(0));
  }
}

void AdamW::set_lr(real lr) {
  AdamWOptions next = options_;
  next.lr = lr;
  check_options(next);
  options_ = next;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::step() {
  ++step_;
  const double t = double(step_);
  const double bc1 = 1.0 - std::pow(double(options_.beta1), t);
  const double bc2 = 1.0 - std::pow(double(options_.beta2), t);
  const real lr = options_.lr, b1 = options_.beta1, b2 = options_.beta2;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (real(1) - b2) * g[j] * g[j];
      const real m_hat = real(m[j] / bc1);
      const real v_hat = real(v[j] / bc2);
      w[j] -= lr * options_.weight_decay * w[j];
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
      if (!std::isfinite(w[j])) {
        throw NumericError("AdamW produced a non-finite value in " + params_[i].name);
      }
    }
  }
}

}  // namespace mravff
