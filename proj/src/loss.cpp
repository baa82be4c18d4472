// SPDX-License-Identifier: Apache-2.0

#include "mravff/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace mravff::inline MRAVFF_ABI::loss {

std::vector<InstantTarget> assign_targets(const std::vector<ActionInstance>& instances,
                                          const std::vector<std::size_t>& level_lengths,
                                          double stride_seconds,
                                          const std::vector<model::RegressionRange>& ranges,
                                          const AssignOptions& options) {
  if (!(stride_seconds > 0)) throw ConfigError("stride_seconds must be positive");
  if (ranges.size() < level_lengths.size()) {
    throw ConfigError("need a regression range for each of " +
                      std::to_string(level_lengths.size()) + " levels");
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!(instances[i].start < instances[i].end)) {
      throw ConfigError("instance " + std::to_string(i) + ": start " +
                        std::to_string(instances[i].start) + " must be < end " +
                        std::to_string(instances[i].end));
    }
  }

  std::vector<InstantTarget> targets;
  for (std::size_t l = 0; l < level_lengths.size(); ++l) {
    const double scale = double(std::size_t(1) << l);
    const double level_stride = scale * stride_seconds;
    for (std::size_t t = 0; t < level_lengths[l]; ++t) {
      InstantTarget tg;
      tg.level = l;
      tg.index = t;
      const double time = (double(t) + 0.5) * level_stride;
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& a = instances[i];
        if (time < a.start || time > a.end) continue;
        const double center = 0.5 * (a.start + a.end);
        if (std::abs(time - center) > options.center_radius * level_stride) continue;
        const double reach = std::max(time - a.start, a.end - time) / stride_seconds;
        if (reach < ranges[l].min || reach >= ranges[l].max) continue;
        if (!best) {
          best = i;
          continue;
        }
        const auto& b = instances[*best];
        const double len_a = a.end - a.start, len_b = b.end - b.start;
        if (len_a < len_b || (len_a == len_b && a.start < b.start)) best = i;
      }
      if (best) {
        const auto& a = instances[*best];
        tg.positive = true;
        tg.label = a.label;
        tg.d_start = (time - a.start) / level_stride;
        tg.d_end = (a.end - time) / level_stride;
        tg.matched_gt = best;
      }
      targets.push_back(tg);
    }
  }
  return targets;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double focal_loss(std::span<const double> logits, std::optional<std::size_t> target,
                  const FocalOptions& options, std::span<double> grad) {
  if (!(options.alpha > 0 && options.alpha < 1) || options.gamma < 0) {
    throw ConfigError("focal loss needs alpha in (0,1) and gamma >= 0");
  }
  if (target && *target >= logits.size()) {
    throw ConfigError("focal loss target class out of range");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const bool pos = target && *target == c;
    const double sign = pos ? 1.0 : -1.0;
    const double alpha_t = pos ? options.alpha : 1.0 - options.alpha;
    const double z = sign * logits[c];
    const double p_t = sigmoid(z);
    const double q_t = sigmoid(-z);  // 1 - p_t without cancellation
    const double log_p = -softplus(-z);
    const double mod = std::pow(q_t, options.gamma);
    total += -alpha_t * mod * log_p;
    if (!grad.empty()) {
      // d/dz of -alpha (1-p)^gamma log p, with dp/dz = p (1-p), chained by sign.
      grad[c] = -alpha_t * sign * (-options.gamma * mod * p_t * log_p + mod * q_t);
    }
  }
  return total;
}

double giou_loss_segments(double s1, double e1, double s2, double e2, double* d_s1,
                          double* d_e1) {
  const double overlap = std::min(e1, e2) - std::max(s1, s2);
  const double inter = std::max(0.0, overlap);
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  const double hull = std::max(e1, e2) - std::min(s1, s2);
  if (!(hull > 0) || !(uni > 0)) throw ContractError("GIoU of two empty segments");
  const double loss = 2.0 - inter / uni - uni / hull;
  if (d_s1 || d_e1) {
    const bool overlapping = overlap > 0;
    const double di_de = (overlapping && e1 < e2) ? 1.0 : 0.0;
    const double di_ds = (overlapping && s1 > s2) ? -1.0 : 0.0;
    const double du_de = 1.0 - di_de;
    const double du_ds = -1.0 - di_ds;
    const double dh_de = e1 > e2 ? 1.0 : 0.0;
    const double dh_ds = s1 < s2 ? -1.0 : 0.0;
    auto dloss = [&](double di, double du, double dh) {
      return -(di * uni - inter * du) / (uni * uni) - (du * hull - uni * dh) / (hull * hull);
    };
    if (d_s1) *d_s1 = dloss(di_ds, du_ds, dh_ds);
    if (d_e1) *d_e1 = dloss(di_de, du_de, dh_de);
  }
  return loss;
}

double iou_loss_1d(double pred_start, double pred_end, double target_start, double target_end,
                   double* d_pred_start, double* d_pred_end) {
  if (pred_start < 0 || pred_end < 0 || target_start < 0 || target_end < 0) {
    throw ContractError("iou_loss_1d distances must be nonnegative");
  }
  if (!(target_start + target_end > 0)) throw ContractError("iou_loss_1d target is degenerate");
  double ds = 0.0, de = 0.0;
  const double loss =
      giou_loss_segments(-pred_start, pred_end, -target_start, target_end, &ds, &de);
  if (d_pred_start) *d_pred_start = -ds;
  if (d_pred_end) *d_pred_end = de;
  return loss;
}

double distance_iou(double pred_start, double pred_end, double target_start, double target_end) {
  return segment_iou(-pred_start, pred_end, -target_start, target_end);
}

LossResult total_loss(const std::vector<model::LevelOutput>& outputs,
                      const std::vector<InstantTarget>& targets, const LossOptions& options) {
  std::size_t expected = 0;
  for (const auto& o : outputs) expected += o.valid;
  if (targets.size() != expected) {
    throw ContractError("total_loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(expected) + " valid instants");
  }

  LossResult result;
  for (const auto& tg : targets) (tg.positive ? result.n_pos : result.n_neg)++;
  const double pos_norm = 1.0 / double(std::max<std::size_t>(1, result.n_pos));
  const double neg_norm = 1.0 / double(std::max<std::size_t>(1, result.n_neg));

  // Gradients w.r.t. every input, scaled by the upstream seed in backward.
  auto grads = std::make_shared<std::vector<std::vector<double>>>();
  std::vector<Tensor> inputs;
  for (const auto& o : outputs) {
    inputs.push_back(o.cls_logits);
    inputs.push_back(o.regression);
    grads->emplace_back(o.cls_logits.numel(), 0.0);
    grads->emplace_back(o.regression.numel(), 0.0);
  }

  double cls_total = 0.0, reg_total = 0.0;
  std::size_t k = 0;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const auto& out = outputs[l];
    const std::size_t classes = out.cls_logits.dim(0), len = out.length();
    if (out.regression.shape() != Shape{2, len}) {
      throw DimensionError("regression output " + shape_str(out.regression.shape()) +
                           " does not match " + shape_str(out.cls_logits.shape()));
    }
    LevelLossRecord record;
    record.level = l;
    auto& g_cls = (*grads)[2 * l];
    auto& g_reg = (*grads)[2 * l + 1];
    std::vector<double> logits(classes), dlogits(classes);
    for (std::size_t t = 0; t < out.valid; ++t, ++k) {
      const auto& tg = targets[k];
      if (tg.level != l || tg.index != t) {
        throw ContractError("total_loss: targets not aligned with outputs at level " +
                            std::to_string(l) + ", index " + std::to_string(t));
      }
      for (std::size_t c = 0; c < classes; ++c) logits[c] = double(out.cls_logits[c * len + t]);
      const double fl = focal_loss(logits, tg.label, options.focal, dlogits);
      if (tg.positive) {
        const double ps = double(out.d_start(t)), pe = double(out.d_end(t));
        double dps = 0.0, dpe = 0.0;
        const double reg = iou_loss_1d(ps, pe, tg.d_start, tg.d_end, &dps, &dpe);
        const double quality = distance_iou(ps, pe, tg.d_start, tg.d_end);
        cls_total += quality * fl * pos_norm;
        reg_total += reg * pos_norm;
        record.cls += quality * fl * pos_norm;
        record.reg += reg * pos_norm;
        ++record.n_pos;
        for (std::size_t c = 0; c < classes; ++c) g_cls[c * len + t] = quality * dlogits[c] * pos_norm;
        g_reg[t] = dps * pos_norm;
        g_reg[len + t] = dpe * pos_norm;
      } else {
        cls_total += fl * neg_norm;
        record.cls += fl * neg_norm;
        for (std::size_t c = 0; c < classes; ++c) g_cls[c * len + t] = dlogits[c] * neg_norm;
      }
    }
    result.levels.push_back(record);
  }

  result.cls = cls_total;
  result.reg = reg_total;
  result.total = Tensor::make_result({1}, {real(cls_total + reg_total)}, std::move(inputs),
                                     [grads](detail::Node& n) {
                                       const double seed = double(n.grad[0]);
                                       for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                                         auto& node = *n.inputs[i];
                                         if (!node.requires_grad) continue;
                                         const auto& g = (*grads)[i];
                                         for (std::size_t j = 0; j < g.size(); ++j) {
                                           node.grad[j] += real(seed * g[j]);
                                         }
                                       }
                                     });
  return result;
}

}  // namespace mravff::loss
