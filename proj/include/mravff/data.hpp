// SPDX-License-Identifier: Apache-2.0
//
// Feature files, annotation sets, dataset loading and the synthetic
// audio-visual generator.
//
// Feature file layout (all little-endian):
//   "MRFF" | u8 version=1 | u8 dtype=0 (f32) | u16 reserved=0 |
//   u32 T | u32 D | f32 stride_seconds | f32 payload[T*D] (time-major)
//
// Dataset directory layout:
//   <root>/visual/<id>.mrff, <root>/audio/<id>.mrff, <root>/annotations.json

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mravff/tensor.hpp"
#include "mravff/types.hpp"

namespace mravff::inline MRAVFF_ABI::data {

inline constexpr std::uint8_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

/// Time-major feature sequence as stored on disk. May be empty (T = 0).
struct FeatureSequence {
  std::size_t length = 0;  // T
  std::size_t dim = 0;     // D
  double stride_seconds = 1.0;
  std::vector<float> values;  // T x D

  /// Channel-major [D, T] tensor. Throws DataError("empty sequence") for T = 0.
  Tensor to_tensor() const;
  static FeatureSequence from_tensor(const Tensor& channel_major, double stride_seconds);
};

std::vector<char> encode_feature_file(const FeatureSequence& seq);
FeatureSequence decode_feature_file(const std::vector<char>& bytes);
void write_feature_file(const std::string& path, const FeatureSequence& seq);
FeatureSequence read_feature_file(const std::string& path);

struct VideoAnnotation {
  std::string id;
  double duration = 0.0;
  std::vector<ActionInstance> actions;
};

struct AnnotationSet {
  std::vector<VideoAnnotation> videos;
  std::vector<std::string> labels;

  /// Throws ConfigError naming the first offending record.
  void validate() const;
  const VideoAnnotation* find(const std::string& id) const;
};

std::string annotations_to_json(const AnnotationSet& set);
AnnotationSet annotations_from_json(const std::string& text);
AnnotationSet read_annotations(const std::string& path);
void write_annotations(const std::string& path, const AnnotationSet& set);

enum class Coupling { visual_only, audio_only, both };

std::string coupling_name(Coupling c);
Coupling parse_coupling(const std::string& name);

struct SyntheticClass {
  std::string name;
  Coupling coupling = Coupling::both;
};

struct SyntheticSpec {
  std::size_t num_videos = 40;
  double min_duration = 50.0;
  double max_duration = 70.0;
  std::size_t d_visual = 64;
  std::size_t d_audio = 128;
  double visual_stride = 0.5;
  double audio_stride = 0.96;
  std::vector<SyntheticClass> classes = {
      {"visual_a", Coupling::visual_only},
      {"visual_b", Coupling::visual_only},
      {"audio_a", Coupling::audio_only},
      {"joint_a", Coupling::both},
  };
  std::size_t min_actions = 2;
  std::size_t max_actions = 5;
  double min_action_length = 2.0;
  double max_action_length = 10.0;
  bool allow_overlap = false;
  double noise_level = 1.0;
  double signal_scale = 1.0;
  bool gate_diagnostics = true;
  /// Drives durations, action placement and noise.
  std::uint64_t seed = 7;
  /// Drives the per-class imprint patterns. Splits generated with different
  /// `seed` but equal `pattern_seed` share the same action classes.
  std::uint64_t pattern_seed = 7;
  /// Prefix of generated video ids.
  std::string id_prefix = "video";

  void validate() const;
};

struct SyntheticVideo {
  VideoAnnotation annotation;
  FeatureSequence visual;
  FeatureSequence audio;
};

struct SyntheticData {
  std::vector<SyntheticVideo> videos;
  std::vector<std::string> labels;

  AnnotationSet annotations() const;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);
void write_synthetic(const std::string& root, const SyntheticData& data);

/// One training/eval clip. Times in `actions` are relative to the clip start.
struct Clip {
  std::string video_id;
  Tensor visual;  // [D_v, T]
  Tensor audio;   // [D_a, A]
  std::size_t valid_visual = 0;
  std::size_t valid_audio = 0;
  double visual_stride = 1.0;
  double audio_stride = 1.0;
  double duration = 0.0;
  double offset = 0.0;
  std::vector<ActionInstance> actions;
};

struct LoadOptions {
  /// Crop clips longer than this many visual instants (0 disables).
  std::size_t max_clip_len = 0;
  /// Pad shorter clips to max_clip_len with zeros; padding is masked.
  bool pad = false;
  std::size_t threads = 1;
};

Clip make_clip(const VideoAnnotation& ann, const FeatureSequence& visual,
               const FeatureSequence& audio);

/// Window [start_frame, start_frame + length) of visual instants. Audio is cut
/// to the same time window. Actions outside are dropped, partial ones clipped.
Clip crop_clip(const Clip& clip, std::size_t start_frame, std::size_t length);

/// Zero-pads visual to `length` instants and audio to the matching duration.
Clip pad_clip(const Clip& clip, std::size_t length);

std::vector<Clip> load_dataset(const AnnotationSet& annotations, const std::string& root,
                               const LoadOptions& options);

/// Worker count from MRAVFF_THREADS (default 1).
std::size_t env_threads();

}  // namespace mravff::data
