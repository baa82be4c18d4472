// SPDX-License-Identifier: Apache-2.0
//
// Audio front-end: 16 kHz mono resampling, 25 ms / 10 ms periodic-Hann STFT
// magnitudes, 64-band mel filterbank over 125-7500 Hz, log(x + 0.01)
// stabilization, 0.96 s non-overlapping 96x64 patches, and a frozen seeded
// encoder mapping each patch to a 128-D embedding.
//
// All DSP runs in double precision; embeddings are stored as float.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mravff/core.hpp"

namespace mravff::inline MRAVFF_ABI::audio {

inline constexpr int kTargetRate = 16000;
inline constexpr std::size_t kWindowLength = 400;  // 25 ms
inline constexpr std::size_t kHopLength = 160;     // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kNumBins = kFftSize / 2 + 1;
inline constexpr std::size_t kNumMelBands = 64;
inline constexpr double kMelLowHz = 125.0;
inline constexpr double kMelHighHz = 7500.0;
inline constexpr double kLogOffset = 0.01;
inline constexpr std::size_t kPatchFrames = 96;
inline constexpr double kPatchSeconds = 0.96;
inline constexpr std::size_t kEmbeddingDim = 128;
inline constexpr std::uint64_t kEncoderSeed = 0x5647474953480001ULL;

struct Waveform {
  std::vector<double> samples;
  double sample_rate = kTargetRate;
};

/// Row-major frames x columns matrix; may have zero rows.
struct FrameMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct LogMelPatch {
  std::vector<double> values;  // kPatchFrames x kNumMelBands
  double start_time = 0.0;
};

struct AudioEmbeddingSequence {
  std::size_t count = 0;
  std::vector<float> values;  // count x kEmbeddingDim
  double hop = kPatchSeconds;
};

/// Linear-interpolation resampler. Already-16 kHz input is returned untouched.
Waveform resample_to_16k(const Waveform& w);

/// w[n] = 0.5 - 0.5 cos(2 pi n / N), n in [0, N).
std::vector<double> periodic_hann(std::size_t length);

std::size_t stft_frame_count(std::size_t num_samples);

/// Magnitude spectrogram [frames, 257] of a 16 kHz waveform.
FrameMatrix stft_magnitude(const Waveform& w);

double hz_to_mel(double hz);

/// Filterbank weights [257, 64]; column b is the triangle of mel band b.
FrameMatrix mel_weight_matrix();

FrameMatrix mel_filterbank(const FrameMatrix& spectrogram);

/// Natural log of (x + 0.01). Negative inputs are a contract error.
FrameMatrix log_stabilize(const FrameMatrix& mel);

std::vector<LogMelPatch> frame_patches(const FrameMatrix& logmel);

/// Frozen stand-in for the pretrained audio encoder:
/// flatten(96x64) -> linear(6144, 128) -> relu -> linear(128, 128).
/// Weights ~ U(+-1/sqrt(fan_in)) from kEncoderSeed, biases zero. Never trained.
class PatchEncoder {
 public:
  explicit PatchEncoder(std::uint64_t seed = kEncoderSeed);
  std::vector<float> encode(const LogMelPatch& patch) const;

 private:
  std::vector<double> w1_;  // 128 x 6144
  std::vector<double> w2_;  // 128 x 128
};

AudioEmbeddingSequence encode_patches(const std::vector<LogMelPatch>& patches,
                                      const PatchEncoder& encoder);

/// Full pipeline: resample, STFT, mel, log, patches, encode.
AudioEmbeddingSequence extract_embeddings(const Waveform& w, const PatchEncoder& encoder);

/// PCM 16-bit mono or stereo; stereo channels are averaged.
Waveform read_wav(const std::string& path);
Waveform decode_wav(const std::vector<char>& bytes);
/// Writes PCM 16-bit mono; samples clipped to [-1, 1).
void write_wav(const std::string& path, const Waveform& w);

}  // namespace mravff::audio
