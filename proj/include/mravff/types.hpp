// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <string>

#include "mravff/core.hpp"

namespace mravff::inline MRAVFF_ABI {

/// Ground-truth action segment, times in seconds.
struct ActionInstance {
  double start = 0.0;
  double end = 0.0;
  std::size_t label = 0;
};

/// Scored predicted segment.
struct Detection {
  double start = 0.0;
  double end = 0.0;
  std::size_t label = 0;
  double score = 0.0;
};

/// Intersection-over-union of two 1-D segments; 0 when the union is empty.
inline double segment_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace mravff
