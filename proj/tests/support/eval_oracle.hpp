// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference evaluator. Written without reference to the library
// matcher: every detection scans every ground-truth segment, and AP is the
// sum over true positives of (1 / num_gt) times the best precision reached at
// that recall or later.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mravff/types.hpp"

namespace mravff::inline MRAVFF_ABI::testing {

struct OracleDetection {
  std::string video;
  double start, end, score;
  std::size_t label;
};

struct OracleGt {
  std::string video;
  double start, end;
  std::size_t label;
};

inline double oracle_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double oracle_ap(std::vector<OracleDetection> dets, const std::vector<OracleGt>& gts,
                        double threshold) {
  if (gts.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  });
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best = -1.0;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || gts[j].video != dets[i].video) continue;
      const double iou = oracle_iou(dets[i].start, dets[i].end, gts[j].start, gts[j].end);
      if (iou >= threshold && iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j < gts.size()) {
      used[best_j] = true;
      tp[i] = true;
    }
  }
  std::vector<double> precision(dets.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    hits += tp[i];
    precision[i] = double(hits) / double(i + 1);
  }
  double ap = 0.0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!tp[i]) continue;
    double best = 0.0;
    for (std::size_t j = i; j < dets.size(); ++j) best = std::max(best, precision[j]);
    ap += best / double(gts.size());
  }
  return ap;
}

struct OracleReport {
  std::vector<std::vector<double>> ap;  // [class][threshold]
  std::vector<double> map;
  double average_map = 0.0;
};

inline OracleReport oracle_evaluate(const std::vector<OracleDetection>& dets,
                                    const std::vector<OracleGt>& gts,
                                    const std::vector<double>& thresholds, std::size_t classes) {
  OracleReport r;
  r.ap.assign(classes, std::vector<double>(thresholds.size()));
  r.map.assign(thresholds.size(), 0.0);
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<OracleDetection> dc;
      std::vector<OracleGt> gc;
      for (const auto& d : dets) {
        if (d.label == c) dc.push_back(d);
      }
      for (const auto& g : gts) {
        if (g.label == c) gc.push_back(g);
      }
      r.ap[c][k] = oracle_ap(dc, gc, thresholds[k]);
      if (!gc.empty()) {
        total += r.ap[c][k];
        ++counted;
      }
    }
    r.map[k] = counted ? total / double(counted) : 0.0;
  }
  for (double m : r.map) r.average_map += m / double(thresholds.size());
  return r;
}

}  // namespace mravff::testing
