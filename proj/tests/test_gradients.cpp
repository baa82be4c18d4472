// SPDX-License-Identifier: Apache-2.0
//
// Built against the double-precision library.

#include <doctest.h>

#include "support/gradient_suite.hpp"

using namespace mravff;
using namespace mravff::testing;

static_assert(sizeof(real) == 8, "gradient checks need the double build");

TEST_CASE("every op matches central differences over ten seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& c : op_gradient_cases(seed)) {
      INFO(c.name << " seed " << seed);
      CHECK(c.error < 1e-4);
    }
  }
}

TEST_CASE("tiny model probe gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    INFO("seed " << seed);
    CHECK(end_to_end_probe_error(seed) < 1e-3);
  }
}

TEST_CASE("baseline fusion modes are differentiable end to end") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CHECK(end_to_end_probe_error(seed, model::FusionMode::concat) < 1e-3);
    CHECK(end_to_end_probe_error(seed, model::FusionMode::pool) < 1e-3);
  }
}

TEST_CASE("training objective gradient matches the frozen-weight oracle") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    INFO("seed " << seed);
    CHECK(end_to_end_loss_error(seed) < 1e-3);
  }
}
