// SPDX-License-Identifier: Apache-2.0

#include "mravff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace mravff::inline MRAVFF_ABI::eval {

using json = nlohmann::json;

namespace {
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  if (a.end != b.end) return a.end < b.end;
  return a.label < b.label;
}

std::vector<Detection> decode_segments(const std::vector<model::LevelOutput>& outputs,
                                       const DecodeOptions& options) {
  if (!(options.score_threshold > 0 && options.score_threshold < 1)) {
    throw ConfigError("score_threshold must lie in (0, 1)");
  }
  std::vector<Detection> dets;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const auto& out = outputs[l];
    const double unit = double(std::size_t(1) << l) * options.stride_seconds;
    const std::size_t classes = out.cls_logits.dim(0), len = out.length();
    for (std::size_t t = 0; t < out.valid; ++t) {
      const double center = (double(t) + 0.5) * unit;
      double start = center - double(out.d_start(t)) * unit;
      double end = center + double(out.d_end(t)) * unit;
      if (options.clip_duration > 0) {
        start = std::clamp(start, 0.0, options.clip_duration);
        end = std::clamp(end, 0.0, options.clip_duration);
      }
      if (!(end > start)) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const double score = sigmoid(double(out.cls_logits[c * len + t]));
        if (score > options.score_threshold) dets.push_back({start, end, c, score});
      }
    }
  }
  std::stable_sort(dets.begin(), dets.end(), detection_order);
  if (dets.size() > options.pre_nms_topk) dets.resize(options.pre_nms_topk);
  return dets;
}

std::vector<Detection> soft_nms(std::vector<Detection> dets, const SoftNmsOptions& options) {
  if (!(options.sigma > 0)) throw ConfigError("soft-NMS sigma must be positive");
  std::map<std::size_t, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.label].push_back(d);

  std::vector<Detection> kept;
  for (auto& [label, pool] : by_class) {
    std::size_t kept_here = 0;
    while (!pool.empty() && kept_here < options.max_keep) {
      auto best = std::min_element(pool.begin(), pool.end(), detection_order);
      if (best->score < options.min_score) break;
      const Detection chosen = *best;
      pool.erase(best);
      kept.push_back(chosen);
      ++kept_here;
      for (auto& d : pool) {
        const double iou = segment_iou(chosen.start, chosen.end, d.start, d.end);
        d.score *= std::exp(-(iou * iou) / options.sigma);
      }
    }
  }
  std::stable_sort(kept.begin(), kept.end(), detection_order);
  return kept;
}

double interpolated_ap(const std::vector<bool>& is_tp, std::size_t num_gt) {
  if (num_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = is_tp.size();
  std::vector<double> prec(n + 2, 0.0), rec(n + 2, 0.0);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_tp[i]) ++tp;
    prec[i + 1] = double(tp) / double(i + 1);
    rec[i + 1] = double(tp) / double(num_gt);
  }
  rec[n + 1] = 1.0;
  for (std::size_t i = n + 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 1; i < n + 2; ++i) {
    if (rec[i] != rec[i - 1]) ap += (rec[i] - rec[i - 1]) * prec[i];
  }
  return ap;
}

EvalReport evaluate(const VideoDetections& dets, const VideoGroundTruth& gt,
                    const std::vector<double>& thresholds, std::size_t num_classes) {
  for (const auto& [vid, list] : dets) {
    if (!gt.count(vid)) throw DataError("detections reference unknown video id '" + vid + "'");
    for (const auto& d : list) {
      if (d.label >= num_classes) {
        throw DataError("detection label " + std::to_string(d.label) + " out of range in " + vid);
      }
    }
  }
  EvalReport report;
  report.thresholds = thresholds;
  report.num_classes = num_classes;
  report.gt_counts.assign(num_classes, 0);
  for (const auto& [vid, list] : gt) {
    for (const auto& a : list) {
      if (a.label >= num_classes) throw DataError("ground-truth label out of range in " + vid);
      ++report.gt_counts[a.label];
    }
  }

  struct Flat {
    const std::string* video;
    Detection det;
  };
  report.ap.assign(num_classes, std::vector<double>(thresholds.size(), 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<Flat> flat;
    for (const auto& [vid, list] : dets) {
      for (const auto& d : list) {
        if (d.label == c) flat.push_back({&vid, d});
      }
    }
    std::stable_sort(flat.begin(), flat.end(), [](const Flat& a, const Flat& b) {
      return detection_order(a.det, b.det);
    });
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      std::map<std::string, std::vector<bool>> used;
      for (const auto& [vid, list] : gt) used[vid].assign(list.size(), false);
      std::vector<bool> is_tp;
      is_tp.reserve(flat.size());
      for (const auto& f : flat) {
        const auto& truth = gt.at(*f.video);
        auto& taken = used[*f.video];
        double best_iou = -1.0;
        std::size_t best = truth.size();
        for (std::size_t g = 0; g < truth.size(); ++g) {
          if (truth[g].label != c || taken[g]) continue;
          const double iou = segment_iou(f.det.start, f.det.end, truth[g].start, truth[g].end);
          if (iou > best_iou) {
            best_iou = iou;
            best = g;
          }
        }
        const bool hit = best < truth.size() && best_iou >= thresholds[k];
        if (hit) taken[best] = true;
        is_tp.push_back(hit);
      }
      report.ap[c][k] = interpolated_ap(is_tp, report.gt_counts[c]);
    }
  }

  report.map.assign(thresholds.size(), 0.0);
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (report.gt_counts[c] == 0) continue;
    ++counted;
    for (std::size_t k = 0; k < thresholds.size(); ++k) report.map[k] += report.ap[c][k];
  }
  for (auto& m : report.map) m = counted ? m / double(counted) : 0.0;
  double avg = 0.0;
  for (double m : report.map) avg += m;
  report.average_map = thresholds.empty() ? 0.0 : avg / double(thresholds.size());
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["thresholds"] = thresholds;
  j["map"] = map;
  j["average_map"] = average_map;
  j["gt_counts"] = gt_counts;
  json per_class = json::array();
  for (std::size_t c = 0; c < ap.size(); ++c) {
    json row = json::array();
    for (double v : ap[c]) row.push_back(std::isnan(v) ? json(nullptr) : json(v));
    per_class.push_back({{"label", c}, {"ap", row}});
  }
  j["per_class"] = per_class;
  return j.dump(2);
}

std::string EvalReport::table(const std::string& row_label) const {
  std::ostringstream os;
  char buf[64];
  const int label_width = int(std::max<std::size_t>(row_label.size(), 6));
  std::snprintf(buf, sizeof buf, "%-*s", label_width, "tIoU");
  os << buf;
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, " %7.1f", t);
    os << buf;
  }
  os << "     Avg\n";
  std::snprintf(buf, sizeof buf, "%-*s", label_width, row_label.c_str());
  os << buf;
  for (double m : map) {
    std::snprintf(buf, sizeof buf, " %7.2f", 100.0 * m);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, " %7.2f\n", 100.0 * average_map);
  os << buf;
  return os.str();
}

std::vector<double> default_thresholds() { return {0.1, 0.2, 0.3, 0.4, 0.5}; }

std::vector<double> parse_thresholds(const std::string& spec) {
  std::vector<double> out;
  try {
    if (spec.find(':') != std::string::npos) {
      const auto a = spec.find(':'), b = spec.find(':', a + 1);
      if (b == std::string::npos) throw ConfigError("threshold range needs lo:hi:step");
      const double lo = std::stod(spec.substr(0, a));
      const double hi = std::stod(spec.substr(a + 1, b - a - 1));
      const double step = std::stod(spec.substr(b + 1));
      if (!(step > 0) || hi < lo) throw ConfigError("bad threshold range " + spec);
      const auto n = std::size_t(std::floor((hi - lo) / step + 1e-9)) + 1;
      for (std::size_t i = 0; i < n; ++i) {
        out.push_back(std::round((lo + double(i) * step) * 1e9) / 1e9);
      }
    } else {
      std::stringstream ss(spec);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse thresholds '" + spec + "'");
  }
  for (double t : out) {
    if (!(t > 0 && t <= 1)) throw ConfigError("tIoU thresholds must lie in (0, 1]");
  }
  if (out.empty()) throw ConfigError("no thresholds in '" + spec + "'");
  return out;
}

std::string predictions_to_json(const VideoDetections& dets) {
  json arr = json::array();
  for (const auto& [vid, list] : dets) {
    for (const auto& d : list) {
      arr.push_back({{"video_id", vid},
                     {"t_start", d.start},
                     {"t_end", d.end},
                     {"label", d.label},
                     {"score", d.score}});
    }
  }
  return arr.dump(2);
}

VideoDetections predictions_from_json(const std::string& text) {
  VideoDetections out;
  try {
    const json arr = json::parse(text);
    for (const auto& j : arr) {
      Detection d;
      d.start = j.at("t_start").get<double>();
      d.end = j.at("t_end").get<double>();
      d.label = j.at("label").get<std::size_t>();
      d.score = j.at("score").get<double>();
      out[j.at("video_id").get<std::string>()].push_back(d);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed predictions file: ") + e.what());
  }
  return out;
}

}  // namespace mravff::eval
