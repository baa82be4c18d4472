// SPDX-License-Identifier: Apache-2.0

#include "mravff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mravff/binary_io.hpp"

namespace mravff::inline MRAVFF_ABI::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

Tensor FeatureSequence::to_tensor() const {
  if (length == 0 || dim == 0) throw DataError("empty sequence");
  std::vector<real> out(length * dim);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t d = 0; d < dim; ++d) out[d * length + t] = real(values[t * dim + d]);
  }
  return Tensor::from({dim, length}, std::move(out));
}

FeatureSequence FeatureSequence::from_tensor(const Tensor& channel_major, double stride_seconds) {
  if (channel_major.rank() != 2) {
    throw DimensionError("feature tensor must be [D, T], got " + shape_str(channel_major.shape()));
  }
  FeatureSequence seq;
  seq.dim = channel_major.dim(0);
  seq.length = channel_major.dim(1);
  seq.stride_seconds = stride_seconds;
  seq.values.resize(seq.dim * seq.length);
  for (std::size_t d = 0; d < seq.dim; ++d) {
    for (std::size_t t = 0; t < seq.length; ++t) {
      seq.values[t * seq.dim + d] = float(channel_major[d * seq.length + t]);
    }
  }
  return seq;
}

std::vector<char> encode_feature_file(const FeatureSequence& seq) {
  if (seq.values.size() != seq.length * seq.dim) {
    throw DimensionError("feature payload holds " + std::to_string(seq.values.size()) +
                         " values, header declares " + std::to_string(seq.length) + "x" +
                         std::to_string(seq.dim));
  }
  if (!(seq.stride_seconds > 0)) throw ConfigError("feature stride must be positive");
  bin::Writer w;
  w.bytes("MRFF");
  w.put<std::uint8_t>(kFeatureVersion);
  w.put<std::uint8_t>(0);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(std::uint32_t(seq.length));
  w.put<std::uint32_t>(std::uint32_t(seq.dim));
  w.put<float>(float(seq.stride_seconds));
  for (float v : seq.values) w.put<float>(v);
  return w.buffer();
}

FeatureSequence decode_feature_file(const std::vector<char>& bytes) {
  bin::Reader r(bytes);
  if (r.bytes(4) != "MRFF") throw FormatError("bad feature file magic", 0);
  const auto version = r.get<std::uint8_t>();
  if (version != kFeatureVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version), 4);
  }
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != 0) throw FormatError("unsupported dtype " + std::to_string(dtype), 5);
  if (r.get<std::uint16_t>() != 0) throw FormatError("reserved field must be zero", 6);
  FeatureSequence seq;
  seq.length = r.get<std::uint32_t>();
  seq.dim = r.get<std::uint32_t>();
  seq.stride_seconds = r.get<float>();
  if (!(seq.stride_seconds > 0)) throw FormatError("stride_seconds must be positive", 16);
  const std::size_t expected = seq.length * seq.dim * 4;
  if (r.remaining() != expected) {
    throw DataError("feature payload length mismatch: expected " + std::to_string(expected) +
                    " bytes for T=" + std::to_string(seq.length) + ", D=" +
                    std::to_string(seq.dim) + ", found " + std::to_string(r.remaining()));
  }
  seq.values.resize(seq.length * seq.dim);
  for (auto& v : seq.values) v = r.get<float>();
  return seq;
}

void write_feature_file(const std::string& path, const FeatureSequence& seq) {
  bin::write_file(path, encode_feature_file(seq));
}

FeatureSequence read_feature_file(const std::string& path) {
  try {
    return decode_feature_file(bin::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Annotations

void AnnotationSet::validate() const {
  for (const auto& v : videos) {
    if (v.id.empty()) throw ConfigError("video with empty id");
    if (!(v.duration > 0)) throw ConfigError("video " + v.id + ": duration must be positive");
    for (std::size_t i = 0; i < v.actions.size(); ++i) {
      const auto& a = v.actions[i];
      const std::string where = "video " + v.id + " action " + std::to_string(i);
      if (!(a.start < a.end)) {
        throw ConfigError(where + ": start " + std::to_string(a.start) +
                          " must be < end " + std::to_string(a.end));
      }
      if (a.start < 0 || a.end > v.duration + 1e-6) {
        throw ConfigError(where + ": segment outside [0, duration]");
      }
      if (a.label >= labels.size()) {
        throw ConfigError(where + ": label " + std::to_string(a.label) + " not in labels");
      }
    }
  }
}

const VideoAnnotation* AnnotationSet::find(const std::string& id) const {
  for (const auto& v : videos) {
    if (v.id == id) return &v;
  }
  return nullptr;
}

std::string annotations_to_json(const AnnotationSet& set) {
  json j;
  j["labels"] = set.labels;
  j["videos"] = json::array();
  for (const auto& v : set.videos) {
    json jv{{"id", v.id}, {"duration_s", v.duration}, {"actions", json::array()}};
    for (const auto& a : v.actions) {
      jv["actions"].push_back({{"start_s", a.start}, {"end_s", a.end}, {"label", a.label}});
    }
    j["videos"].push_back(std::move(jv));
  }
  return j.dump(2);
}

AnnotationSet annotations_from_json(const std::string& text) {
  AnnotationSet set;
  try {
    const json j = json::parse(text);
    set.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& jv : j.at("videos")) {
      VideoAnnotation v;
      v.id = jv.at("id").get<std::string>();
      v.duration = jv.at("duration_s").get<double>();
      for (const auto& ja : jv.at("actions")) {
        ActionInstance a;
        a.start = ja.at("start_s").get<double>();
        a.end = ja.at("end_s").get<double>();
        a.label = ja.at("label").get<std::size_t>();
        v.actions.push_back(a);
      }
      set.videos.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed annotations: ") + e.what());
  }
  set.validate();
  return set;
}

AnnotationSet read_annotations(const std::string& path) {
  const auto bytes = bin::read_file(path);
  return annotations_from_json(std::string(bytes.begin(), bytes.end()));
}

void write_annotations(const std::string& path, const AnnotationSet& set) {
  const auto text = annotations_to_json(set);
  bin::write_file(path, std::vector<char>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Synthetic generator

std::string coupling_name(Coupling c) {
  switch (c) {
    case Coupling::visual_only: return "visual_only";
    case Coupling::audio_only: return "audio_only";
    case Coupling::both: return "both";
  }
  return "both";
}

Coupling parse_coupling(const std::string& name) {
  if (name == "visual_only") return Coupling::visual_only;
  if (name == "audio_only") return Coupling::audio_only;
  if (name == "both") return Coupling::both;
  throw ConfigError("unknown modality coupling '" + name + "'");
}

void SyntheticSpec::validate() const {
  if (num_videos == 0) throw ConfigError("synthetic spec needs at least one video");
  if (!(min_duration > 0) || max_duration < min_duration) {
    throw ConfigError("synthetic duration range invalid");
  }
  if (d_visual == 0 || d_audio == 0) throw ConfigError("feature dims must be positive");
  if (!(visual_stride > 0) || !(audio_stride > 0)) throw ConfigError("strides must be positive");
  if (classes.empty()) throw ConfigError("synthetic spec needs at least one class");
  if (max_actions < min_actions) throw ConfigError("action count range invalid");
  if (!(min_action_length > 0) || max_action_length < min_action_length) {
    throw ConfigError("zero-length or inverted action length range");
  }
  if (max_action_length >= min_duration) {
    throw ConfigError("actions must be shorter than the shortest video");
  }
  if (noise_level < 0) throw ConfigError("noise_level must be nonnegative");
  if (gate_diagnostics) {
    const auto has = [this](Coupling c) {
      return std::any_of(classes.begin(), classes.end(),
                         [c](const SyntheticClass& k) { return k.coupling == c; });
    };
    if (!has(Coupling::audio_only) || !has(Coupling::visual_only)) {
      throw ConfigError(
          "gate diagnostics need at least one audio_only and one visual_only class");
    }
  }
}

AnnotationSet SyntheticData::annotations() const {
  AnnotationSet set;
  set.labels = labels;
  for (const auto& v : videos) set.videos.push_back(v.annotation);
  return set;
}

namespace {

std::vector<float> class_pattern(std::uint64_t seed, std::size_t cls, std::size_t modality,
                                  std::size_t dim) {
  std::seed_seq seq{seed, std::uint64_t(cls), std::uint64_t(modality), std::uint64_t(0x9a77e2)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<float> p(dim);
  for (auto& v : p) v = float(dist(rng));
  return p;
}

void imprint(FeatureSequence& seq, const std::vector<float>& pattern, double scale, double start,
             double end) {
  for (std::size_t t = 0; t < seq.length; ++t) {
    const double center = (double(t) + 0.5) * seq.stride_seconds;
    if (center < start || center >= end) continue;
    for (std::size_t d = 0; d < seq.dim; ++d) {
      seq.values[t * seq.dim + d] += float(scale * pattern[d]);
    }
  }
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  for (const auto& c : spec.classes) out.labels.push_back(c.name);

  std::vector<std::vector<float>> visual_patterns, audio_patterns;
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    visual_patterns.push_back(class_pattern(spec.pattern_seed, k, 0, spec.d_visual));
    audio_patterns.push_back(class_pattern(spec.pattern_seed, k, 1, spec.d_audio));
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  for (std::size_t v = 0; v < spec.num_videos; ++v) {
    SyntheticVideo video;
    char id[32];
    std::snprintf(id, sizeof id, "_%03zu", v);
    video.annotation.id = spec.id_prefix + id;
    const double duration = uniform(spec.min_duration, spec.max_duration);

    video.visual.stride_seconds = spec.visual_stride;
    video.visual.dim = spec.d_visual;
    video.visual.length = std::size_t(std::floor(duration / spec.visual_stride));
    video.audio.stride_seconds = spec.audio_stride;
    video.audio.dim = spec.d_audio;
    video.audio.length = std::size_t(std::floor(duration / spec.audio_stride));
    // Durations are snapped to whole visual instants so every annotation
    // lies inside the feature sequence.
    video.annotation.duration = double(video.visual.length) * spec.visual_stride;

    for (auto* seq : {&video.visual, &video.audio}) {
      seq->values.resize(seq->length * seq->dim);
      for (auto& x : seq->values) x = float(spec.noise_level * noise(rng));
    }

    const auto count = spec.min_actions +
                       std::size_t(unit(rng) * double(spec.max_actions - spec.min_actions + 1));
    const std::size_t n_actions = std::min(count, spec.max_actions);
    for (std::size_t a = 0; a < n_actions; ++a) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        const double len = uniform(spec.min_action_length, spec.max_action_length);
        const double start = uniform(0.0, video.annotation.duration - len);
        const double end = start + len;
        const bool clash = std::any_of(
            video.annotation.actions.begin(), video.annotation.actions.end(),
            [&](const ActionInstance& o) { return start < o.end && o.start < end; });
        if (clash && !spec.allow_overlap) continue;
        const auto label = std::min(std::size_t(unit(rng) * double(spec.classes.size())),
                                    spec.classes.size() - 1);
        video.annotation.actions.push_back({start, end, label});
        const Coupling c = spec.classes[label].coupling;
        if (c != Coupling::audio_only) {
          imprint(video.visual, visual_patterns[label], spec.signal_scale, start, end);
        }
        if (c != Coupling::visual_only) {
          imprint(video.audio, audio_patterns[label], spec.signal_scale, start, end);
        }
        break;
      }
    }
    std::sort(video.annotation.actions.begin(), video.annotation.actions.end(),
              [](const ActionInstance& x, const ActionInstance& y) { return x.start < y.start; });
    out.videos.push_back(std::move(video));
  }
  return out;
}

void write_synthetic(const std::string& root, const SyntheticData& data) {
  fs::create_directories(fs::path(root) / "visual");
  fs::create_directories(fs::path(root) / "audio");
  for (const auto& v : data.videos) {
    write_feature_file((fs::path(root) / "visual" / (v.annotation.id + ".mrff")).string(), v.visual);
    write_feature_file((fs::path(root) / "audio" / (v.annotation.id + ".mrff")).string(), v.audio);
  }
  write_annotations((fs::path(root) / "annotations.json").string(), data.annotations());
}

// ---------------------------------------------------------------------------
// Clips and loading

Clip make_clip(const VideoAnnotation& ann, const FeatureSequence& visual,
               const FeatureSequence& audio) {
  if (visual.length == 0) throw DataError("video " + ann.id + ": empty sequence (visual)");
  if (audio.length == 0) throw DataError("video " + ann.id + ": empty sequence (audio)");
  Clip clip;
  clip.video_id = ann.id;
  clip.visual = visual.to_tensor();
  clip.audio = audio.to_tensor();
  clip.valid_visual = visual.length;
  clip.valid_audio = audio.length;
  clip.visual_stride = visual.stride_seconds;
  clip.audio_stride = audio.stride_seconds;
  clip.duration = ann.duration;
  clip.actions = ann.actions;
  return clip;
}

namespace {

Tensor slice_time(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t dim = x.dim(0), len = x.dim(1);
  std::vector<real> out(dim * (end - begin));
  for (std::size_t d = 0; d < dim; ++d) {
    std::copy(x.data().begin() + std::ptrdiff_t(d * len + begin),
              x.data().begin() + std::ptrdiff_t(d * len + end),
              out.begin() + std::ptrdiff_t(d * (end - begin)));
  }
  return Tensor::from({dim, end - begin}, std::move(out));
}

Tensor pad_time(const Tensor& x, std::size_t length) {
  const std::size_t dim = x.dim(0), len = x.dim(1);
  if (length <= len) return x;
  std::vector<real> out(dim * length, real(0));
  for (std::size_t d = 0; d < dim; ++d) {
    std::copy_n(x.data().begin() + std::ptrdiff_t(d * len), len,
                out.begin() + std::ptrdiff_t(d * length));
  }
  return Tensor::from({dim, length}, std::move(out));
}

}  // namespace

Clip crop_clip(const Clip& clip, std::size_t start_frame, std::size_t length) {
  if (length == 0 || start_frame >= clip.valid_visual) {
    throw ConfigError("crop window outside clip " + clip.video_id);
  }
  const std::size_t end_frame = std::min(start_frame + length, clip.valid_visual);
  const double t0 = double(start_frame) * clip.visual_stride;
  const double t1 = double(end_frame) * clip.visual_stride;

  std::size_t a_begin = clip.valid_audio, a_end = 0;
  for (std::size_t i = 0; i < clip.valid_audio; ++i) {
    const double center = (double(i) + 0.5) * clip.audio_stride;
    if (center >= t0 && center < t1) {
      a_begin = std::min(a_begin, i);
      a_end = std::max(a_end, i + 1);
    }
  }
  if (a_begin >= a_end) {
    // Window narrower than one audio step: keep the overlapping audio frame.
    a_begin = std::min(std::size_t(t0 / clip.audio_stride), clip.valid_audio - 1);
    a_end = a_begin + 1;
  }

  Clip out;
  out.video_id = clip.video_id;
  out.visual = slice_time(clip.visual, start_frame, end_frame);
  out.audio = slice_time(clip.audio, a_begin, a_end);
  out.valid_visual = end_frame - start_frame;
  out.valid_audio = a_end - a_begin;
  out.visual_stride = clip.visual_stride;
  out.audio_stride = clip.audio_stride;
  out.duration = t1 - t0;
  out.offset = clip.offset + t0;
  for (const auto& a : clip.actions) {
    const double s = std::max(a.start, t0), e = std::min(a.end, t1);
    if (e <= s) continue;
    out.actions.push_back({s - t0, e - t0, a.label});
  }
  return out;
}

Clip pad_clip(const Clip& clip, std::size_t length) {
  Clip out = clip;
  out.visual = pad_time(clip.visual, length);
  const auto audio_len = std::size_t(
      std::ceil(double(length) * clip.visual_stride / clip.audio_stride - 1e-9));
  out.audio = pad_time(clip.audio, std::max<std::size_t>(audio_len, 1));
  return out;
}

std::size_t env_threads() {
  if (const char* v = std::getenv("MRAVFF_THREADS")) {
    const long n = std::strtol(v, nullptr, 10);
    if (n > 0) return std::size_t(n);
  }
  return 1;
}

std::vector<Clip> load_dataset(const AnnotationSet& annotations, const std::string& root,
                               const LoadOptions& options) {
  annotations.validate();
  std::vector<std::string> missing;
  for (const auto& v : annotations.videos) {
    for (const char* modality : {"visual", "audio"}) {
      if (!fs::exists(fs::path(root) / modality / (v.id + ".mrff"))) {
        missing.push_back(v.id + " (" + modality + ")");
      }
    }
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "missing feature files for:";
    for (const auto& m : missing) os << ' ' << m;
    throw DataError(os.str());
  }

  auto load_one = [&](const VideoAnnotation& v) {
    const auto visual = read_feature_file((fs::path(root) / "visual" / (v.id + ".mrff")).string());
    const auto audio = read_feature_file((fs::path(root) / "audio" / (v.id + ".mrff")).string());
    Clip clip = make_clip(v, visual, audio);
    if (options.max_clip_len > 0 && clip.valid_visual > options.max_clip_len) {
      clip = crop_clip(clip, 0, options.max_clip_len);
    }
    if (options.pad && options.max_clip_len > 0) clip = pad_clip(clip, options.max_clip_len);
    return clip;
  };

  const std::size_t n = annotations.videos.size();
  std::vector<Clip> clips(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) clips[i] = load_one(annotations.videos[i]);
    return clips;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) clips[i] = load_one(annotations.videos[i]);
    }));
  }
  for (auto& j : jobs) j.get();
  return clips;
}

}  // namespace mravff::data
