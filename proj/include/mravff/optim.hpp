// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "mravff/tensor.hpp"

namespace mravff::inline MRAVFF_ABI {

struct AdamWOptions {
  real lr = real(1e-3);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
  real weight_decay = real(1e-4);
};

/// Adam with decoupled weight decay. Holds one (m, v) slot per parameter,
/// bound by position to the parameter list given at construction.
class AdamW {
 public:
  AdamW(std::vector<Parameter> params, AdamWOptions options);

  /// Applies one update from the parameters' current gradients.
  void step();
  void zero_grad();

  std::int64_t steps() const { return step_; }
  const AdamWOptions& options() const { return options_; }
  void set_lr(real lr);

 private:
  std::vector<Parameter> params_;
  AdamWOptions options_;
  std::vector<std::vector<real>> m_;
  std::vector<std::vector<real>> v_;
  std::int64_t step_ = 0;
};

}  // namespace mravff
