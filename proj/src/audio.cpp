// SPDX-License-Identifier: Apache-2.0

#include "mravff/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <random>

#include "mravff/binary_io.hpp"
#include "mravff/core.hpp"

namespace mravff::inline MRAVFF_ABI::audio {

Waveform resample_to_16k(const Waveform& w) {
  if (!(w.sample_rate > 0)) throw ConfigError("sample rate must be positive");
  if (w.sample_rate == kTargetRate || w.samples.empty()) {
    return Waveform{w.samples, double(kTargetRate)};
  }
  const std::size_t n_in = w.samples.size();
  const double step = w.sample_rate / kTargetRate;
  const auto n_out = static_cast<std::size_t>(std::floor(double(n_in) / step));
  Waveform out;
  out.sample_rate = kTargetRate;
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = double(i) * step;
    const auto i0 = std::min(static_cast<std::size_t>(pos), n_in - 1);
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    const double frac = pos - double(i0);
    out.samples[i] = w.samples[i0] + (w.samples[i1] - w.samples[i0]) * frac;
  }
  return out;
}

std::vector<double> periodic_hann(std::size_t length) {
  std::vector<double> win(length);
  for (std::size_t n = 0; n < length; ++n) {
    win[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(n) / double(length));
  }
  return win;
}

std::size_t stft_frame_count(std::size_t num_samples) {
  if (num_samples < kWindowLength) return 0;
  return 1 + (num_samples - kWindowLength) / kHopLength;
}

namespace {

// FFTW's planner is not thread-safe; execution of an existing plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  RealFft() {
    in_ = fftw_alloc_real(kFftSize);
    out_ = fftw_alloc_complex(kNumBins);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(int(kFftSize), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void run() { fftw_execute(plan_); }
  double magnitude(std::size_t k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace

FrameMatrix stft_magnitude(const Waveform& w) {
  if (w.sample_rate != kTargetRate) {
    throw ConfigError("stft_magnitude expects 16 kHz input, got " +
                      std::to_string(w.sample_rate) + " Hz");
  }
  FrameMatrix spec;
  spec.rows = stft_frame_count(w.samples.size());
  spec.cols = kNumBins;
  spec.values.assign(spec.rows * spec.cols, 0.0);
  if (spec.rows == 0) return spec;

  const auto window = periodic_hann(kWindowLength);
  RealFft fft;
  double* buf = fft.input();
  for (std::size_t f = 0; f < spec.rows; ++f) {
    const double* frame = w.samples.data() + f * kHopLength;
    for (std::size_t n = 0; n < kWindowLength; ++n) buf[n] = frame[n] * window[n];
    std::fill(buf + kWindowLength, buf + kFftSize, 0.0);
    fft.run();
    for (std::size_t k = 0; k < kNumBins; ++k) spec.values[f * kNumBins + k] = fft.magnitude(k);
  }
  return spec;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

FrameMatrix mel_weight_matrix() {
  const double nyquist = kTargetRate / 2.0;
  const double lo = hz_to_mel(kMelLowHz), hi = hz_to_mel(kMelHighHz);
  std::vector<double> edges(kNumMelBands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = lo + (hi - lo) * double(i) / double(edges.size() - 1);
  }
  FrameMatrix m;
  m.rows = kNumBins;
  m.cols = kNumMelBands;
  m.values.assign(m.rows * m.cols, 0.0);
  // Bin 0 (DC) carries no weight.
  for (std::size_t k = 1; k < kNumBins; ++k) {
    const double mel = hz_to_mel(nyquist * double(k) / double(kNumBins - 1));
    for (std::size_t b = 0; b < kNumMelBands; ++b) {
      const double lower = edges[b], center = edges[b + 1], upper = edges[b + 2];
      const double rise = (mel - lower) / (center - lower);
      const double fall = (upper - mel) / (upper - center);
      m.values[k * kNumMelBands + b] = std::max(0.0, std::min(rise, fall));
    }
  }
  return m;
}

FrameMatrix mel_filterbank(const FrameMatrix& spectrogram) {
  if (spectrogram.cols != kNumBins) {
    throw DimensionError("mel_filterbank expects " + std::to_string(kNumBins) +
                         " frequency bins, got " + std::to_string(spectrogram.cols));
  }
  static const FrameMatrix weights = mel_weight_matrix();
  FrameMatrix mel;
  mel.rows = spectrogram.rows;
  mel.cols = kNumMelBands;
  mel.values.assign(mel.rows * mel.cols, 0.0);
  for (std::size_t f = 0; f < mel.rows; ++f) {
    for (std::size_t k = 0; k < kNumBins; ++k) {
      const double mag = spectrogram.values[f * kNumBins + k];
      if (mag == 0.0) continue;
      const double* wrow = weights.values.data() + k * kNumMelBands;
      double* out = mel.values.data() + f * kNumMelBands;
      for (std::size_t b = 0; b < kNumMelBands; ++b) out[b] += mag * wrow[b];
    }
  }
  return mel;
}

FrameMatrix log_stabilize(const FrameMatrix& mel) {
  FrameMatrix out = mel;
  for (auto& v : out.values) {
    if (v < 0.0) throw ContractError("log_stabilize: negative mel energy " + std::to_string(v));
    v = std::log(v + kLogOffset);
  }
  return out;
}

std::vector<LogMelPatch> frame_patches(const FrameMatrix& logmel) {
  std::vector<LogMelPatch> patches;
  const std::size_t count = logmel.rows / kPatchFrames;
  const std::size_t span = kPatchFrames * logmel.cols;
  for (std::size_t p = 0; p < count; ++p) {
    LogMelPatch patch;
    const auto begin = logmel.values.begin() + std::ptrdiff_t(p * span);
    patch.values.assign(begin, begin + std::ptrdiff_t(span));
    patch.start_time = double(p) * kPatchSeconds;
    patches.push_back(std::move(patch));
  }
  return patches;
}

PatchEncoder::PatchEncoder(std::uint64_t seed) {
  constexpr std::size_t in_dim = kPatchFrames * kNumMelBands;
  std::mt19937_64 rng(seed);
  auto fill = [&rng](std::vector<double>& w, std::size_t rows, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    w.resize(rows * fan_in);
    for (auto& v : w) v = dist(rng);
  };
  fill(w1_, kEmbeddingDim, in_dim);
  fill(w2_, kEmbeddingDim, kEmbeddingDim);
}

std::vector<float> PatchEncoder::encode(const LogMelPatch& patch) const {
  constexpr std::size_t in_dim = kPatchFrames * kNumMelBands;
  if (patch.values.size() != in_dim) {
    throw DimensionError("patch must hold 96x64 values, got " + std::to_string(patch.values.size()));
  }
  std::vector<double> hidden(kEmbeddingDim, 0.0);
  for (std::size_t o = 0; o < kEmbeddingDim; ++o) {
    const double* row = w1_.data() + o * in_dim;
    double acc = 0.0;
    for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * patch.values[i];
    hidden[o] = std::max(acc, 0.0);
  }
  std::vector<float> out(kEmbeddingDim);
  for (std::size_t o = 0; o < kEmbeddingDim; ++o) {
    const double* row = w2_.data() + o * kEmbeddingDim;
    double acc = 0.0;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) acc += row[i] * hidden[i];
    out[o] = float(acc);
  }
  return out;
}

AudioEmbeddingSequence encode_patches(const std::vector<LogMelPatch>& patches,
                                      const PatchEncoder& encoder) {
  AudioEmbeddingSequence seq;
  seq.count = patches.size();
  seq.values.reserve(seq.count * kEmbeddingDim);
  for (const auto& p : patches) {
    auto e = encoder.encode(p);
    seq.values.insert(seq.values.end(), e.begin(), e.end());
  }
  return seq;
}

AudioEmbeddingSequence extract_embeddings(const Waveform& w, const PatchEncoder& encoder) {
  const auto resampled = resample_to_16k(w);
  const auto logmel = log_stabilize(mel_filterbank(stft_magnitude(resampled)));
  return encode_patches(frame_patches(logmel), encoder);
}

Waveform decode_wav(const std::vector<char>& bytes) {
  bin::Reader r(bytes);
  if (r.bytes(4) != "RIFF") throw FormatError("not a RIFF file", 0);
  r.get<std::uint32_t>();
  if (r.bytes(4) != "WAVE") throw FormatError("RIFF file is not WAVE", 8);
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.bytes(4);
    const auto size = r.get<std::uint32_t>();
    const std::size_t body = r.offset();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too short", body);
      format = r.get<std::uint16_t>();
      channels = r.get<std::uint16_t>();
      rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      bits = r.get<std::uint16_t>();
      r.bytes(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk", body);
      if (format != 1 || bits != 16) {
        throw FormatError("only PCM 16-bit WAV is supported (format " + std::to_string(format) +
                              ", " + std::to_string(bits) + " bits)",
                          body);
      }
      if (channels != 1 && channels != 2) {
        throw FormatError("unsupported channel count " + std::to_string(channels), body);
      }
      if (rate == 0) throw FormatError("zero sample rate", body);
      const std::size_t frames = size / (2u * channels);
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) acc += r.get<std::int16_t>() / 32768.0;
        w.samples[i] = acc / channels;
      }
      return w;
    } else {
      r.bytes(size);
    }
    if (size % 2 == 1 && r.remaining() > 0) r.bytes(1);
  }
  throw FormatError("WAV file has no data chunk", r.offset());
}

Waveform read_wav(const std::string& path) { return decode_wav(bin::read_file(path)); }

void write_wav(const std::string& path, const Waveform& w) {
  const auto rate = static_cast<std::uint32_t>(w.sample_rate);
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  bin::Writer out;
  out.bytes("RIFF");
  out.put<std::uint32_t>(36 + data_bytes);
  out.bytes("WAVE");
  out.bytes("fmt ");
  out.put<std::uint32_t>(16);
  out.put<std::uint16_t>(1);
  out.put<std::uint16_t>(1);
  out.put<std::uint32_t>(rate);
  out.put<std::uint32_t>(rate * 2);
  out.put<std::uint16_t>(2);
  out.put<std::uint16_t>(16);
  out.bytes("data");
  out.put<std::uint32_t>(data_bytes);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    out.put<std::int16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0)));
  }
  bin::write_file(path, out.buffer());
}

}  // namespace mravff::audio
