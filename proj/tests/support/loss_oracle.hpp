// SPDX-License-Identifier: Apache-2.0
//
// Reference objective written directly from the formula, with an optional
// frozen quality weight per positive instant.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mravff/loss.hpp"
#include "mravff/model.hpp"

namespace mravff::inline MRAVFF_ABI::testing {

inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Multi-binary focal loss, alpha for positives and 1 - alpha for negatives.
inline double ref_focal(const std::vector<double>& logits, std::optional<std::size_t> label,
                        double alpha = 0.25, double gamma = 2.0) {
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double p = ref_sigmoid(logits[c]);
    const bool pos = label && *label == c;
    const double pt = pos ? p : 1.0 - p;
    const double a = pos ? alpha : 1.0 - alpha;
    total += -a * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return total;
}

/// Segments [-ps, pe] and [-ts, te] around a shared instant.
inline double ref_iou(double ps, double pe, double ts, double te) {
  const double inter = std::max(0.0, std::min(pe, te) + std::min(ps, ts));
  const double uni = ps + pe + ts + te - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double ref_giou_loss(double ps, double pe, double ts, double te) {
  const double inter = std::max(0.0, std::min(pe, te) + std::min(ps, ts));
  const double uni = ps + pe + ts + te - inter;
  const double hull = std::max(pe, te) + std::max(ps, ts);
  return 1.0 - (inter / uni - (hull - uni) / hull);
}

struct RefLoss {
  double total = 0.0;
  std::vector<double> quality;  // one per positive, in target order
};

/// When `frozen_quality` is given its entries replace the IoU weights, which
/// turns the weight into a constant as far as finite differences see it.
inline RefLoss reference_loss(const std::vector<model::LevelOutput>& outputs,
                              const std::vector<loss::InstantTarget>& targets,
                              const std::vector<double>* frozen_quality = nullptr) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& t : targets) (t.positive ? n_pos : n_neg)++;
  const double pos_norm = 1.0 / double(std::max<std::size_t>(1, n_pos));
  const double neg_norm = 1.0 / double(std::max<std::size_t>(1, n_neg));
  RefLoss r;
  std::size_t k = 0, q = 0;
  for (const auto& out : outputs) {
    const std::size_t classes = out.cls_logits.dim(0), len = out.length();
    for (std::size_t t = 0; t < out.valid; ++t, ++k) {
      const auto& tg = targets[k];
      std::vector<double> logits(classes);
      for (std::size_t c = 0; c < classes; ++c) logits[c] = double(out.cls_logits[c * len + t]);
      const double fl = ref_focal(logits, tg.label);
      if (tg.positive) {
        const double ps = double(out.d_start(t)), pe = double(out.d_end(t));
        const double w = frozen_quality ? (*frozen_quality)[q] : ref_iou(ps, pe, tg.d_start, tg.d_end);
        r.quality.push_back(w);
        ++q;
        r.total += pos_norm * (w * fl + ref_giou_loss(ps, pe, tg.d_start, tg.d_end));
      } else {
        r.total += neg_norm * fl;
      }
    }
  }
  return r;
}

}  // namespace mravff::testing
