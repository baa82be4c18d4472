// SPDX-License-Identifier: Apache-2.0
//
// Segment decoding, per-class Soft-NMS and tIoU-thresholded mAP.

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mravff/model.hpp"
#include "mravff/types.hpp"

namespace mravff::inline MRAVFF_ABI::eval {

struct DecodeOptions {
  double stride_seconds = 1.0;
  double clip_duration = 0.0;  // segments are clamped to [0, clip_duration]
  double score_threshold = 0.001;
  std::size_t pre_nms_topk = 2000;
};

/// Instant (l, t) -> center (t + 0.5) * 2^l * stride, boundaries at
/// center -/+ d * 2^l * stride, one candidate per class with sigmoid score
/// above the threshold. Only valid instants are decoded. Sorted by score.
std::vector<Detection> decode_segments(const std::vector<model::LevelOutput>& outputs,
                                       const DecodeOptions& options);

struct SoftNmsOptions {
  double sigma = 0.5;
  double min_score = 0.001;
  std::size_t max_keep = 200;
};

/// Gaussian Soft-NMS applied independently within each class. The result is
/// sorted by descending score.
std::vector<Detection> soft_nms(std::vector<Detection> dets, const SoftNmsOptions& options = {});

/// Deterministic detection order: score descending, then start, end, label.
bool detection_order(const Detection& a, const Detection& b);

using VideoDetections = std::map<std::string, std::vector<Detection>>;
using VideoGroundTruth = std::map<std::string, std::vector<ActionInstance>>;

struct EvalReport {
  std::vector<double> thresholds;
  std::size_t num_classes = 0;
  std::vector<std::size_t> gt_counts;        // per class
  std::vector<std::vector<double>> ap;       // [class][threshold]; NaN if no GT
  std::vector<double> map;                   // per threshold
  double average_map = 0.0;

  std::string to_json() const;
  /// Aligned text table: "tIoU 0.1 0.2 ... Avg" with mAP in percent.
  std::string table(const std::string& row_label = "mAP") const;
};

/// Interpolated AP from a score-ordered TP/FP sequence.
double interpolated_ap(const std::vector<bool>& is_tp, std::size_t num_gt);

EvalReport evaluate(const VideoDetections& dets, const VideoGroundTruth& gt,
                    const std::vector<double>& thresholds, std::size_t num_classes);

std::vector<double> default_thresholds();
/// "lo:hi:step" inclusive, or a comma-separated list.
std::vector<double> parse_thresholds(const std::string& spec);

/// JSON array of {video_id, t_start, t_end, label, score}.
std::string predictions_to_json(const VideoDetections& dets);
VideoDetections predictions_from_json(const std::string& text);

}  // namespace mravff::eval
