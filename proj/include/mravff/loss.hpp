// SPDX-License-Identifier: Apache-2.0
//
// Target assignment and the quality-weighted detection objective:
//
//   L = 1/N_pos * sum_pos (iou * FL + (1 - GIoU)) + 1/N_neg * sum_neg FL
//
// where FL is the per-class sigmoid focal loss and `iou` is the temporal IoU
// between the decoded prediction and its matched ground truth, held constant
// during differentiation. N_pos / N_neg are clamped to at least 1.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mravff/model.hpp"
#include "mravff/types.hpp"

namespace mravff::inline MRAVFF_ABI::loss {

struct InstantTarget {
  std::size_t level = 0;
  std::size_t index = 0;
  bool positive = false;
  std::optional<std::size_t> label;       // nullopt = background
  double d_start = 0.0;                   // level-grid units
  double d_end = 0.0;
  std::optional<std::size_t> matched_gt;  // index into the instance list
};

struct AssignOptions {
  double center_radius = 1.5;  // in level strides
};

/// One target per valid instant, ordered by level then index. Instant (l, t)
/// sits at time (t + 0.5) * 2^l * stride_seconds.
std::vector<InstantTarget> assign_targets(const std::vector<ActionInstance>& instances,
                                          const std::vector<std::size_t>& level_lengths,
                                          double stride_seconds,
                                          const std::vector<model::RegressionRange>& ranges,
                                          const AssignOptions& options = {});

struct FocalOptions {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Sum over classes of the sigmoid focal loss. When `grad` is non-empty it
/// receives dFL/dlogit per class.
double focal_loss(std::span<const double> logits, std::optional<std::size_t> target,
                  const FocalOptions& options = {}, std::span<double> grad = {});

/// 1 - GIoU of segments [s1, e1] (prediction) and [s2, e2] (target).
/// Optional outputs receive d/ds1 and d/de1.
double giou_loss_segments(double s1, double e1, double s2, double e2, double* d_s1 = nullptr,
                          double* d_e1 = nullptr);

/// 1 - GIoU of the two segments [-d_start, d_end] around a shared instant.
/// Optional outputs receive derivatives with respect to the predicted distances.
double iou_loss_1d(double pred_start, double pred_end, double target_start, double target_end,
                   double* d_pred_start = nullptr, double* d_pred_end = nullptr);

/// Plain IoU of the same reconstructed segments.
double distance_iou(double pred_start, double pred_end, double target_start, double target_end);

struct LossOptions {
  FocalOptions focal;
};

struct LevelLossRecord {
  std::size_t level = 0;
  double cls = 0.0;
  double reg = 0.0;
  std::size_t n_pos = 0;
};

struct LossResult {
  Tensor total;  // scalar, differentiable w.r.t. head outputs
  double cls = 0.0;
  double reg = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::vector<LevelLossRecord> levels;
};

LossResult total_loss(const std::vector<model::LevelOutput>& outputs,
                      const std::vector<InstantTarget>& targets, const LossOptions& options = {});

}  // namespace mravff::loss
