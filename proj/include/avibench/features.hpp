/*
 * Copyright 2026 The avibench Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <fftw3.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "avibench/audio.hpp"
#include "avibench/common.hpp"
#include "avibench/rng.hpp"

namespace avibench {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Magnitude spectrogram, one row per frame, frame_len/2 + 1 bins per row.
struct Spectrogram {
  Matrix frames;
  int frame_len = 0;
  int hop = 0;
  int sample_rate_hz = 0;

  int n_bins() const { return frame_len / 2 + 1; }
};

namespace detail {

// FFTW's planner is not re-entrant; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<std::size_t>(n));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* output() const { return out_; }
  void execute() { fftw_execute(plan_); }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace detail

// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// Hann-windowed magnitude STFT. Frames start at multiples of hop; a trailing
/// partial frame is not emitted.
inline Spectrogram stft(const AudioClip& clip, int frame_len = 1024, int hop = 512) {
  if (!is_power_of_two(frame_len)) {
    throw Error(ErrorCode::kInvalidArgument, "frame length must be a power of two");
  }
  if (hop <= 0 || hop > frame_len) {
    throw Error(ErrorCode::kInvalidArgument, "hop must be in (0, frame_len]");
  }
  if (clip.samples.size() < static_cast<std::size_t>(frame_len)) {
    throw Error(ErrorCode::kInsufficientData, "clip shorter than one frame");
  }
  const std::size_t n_frames = 1 + (clip.samples.size() - frame_len) / hop;
  Spectrogram spec{Matrix(n_frames, frame_len / 2 + 1), frame_len, hop, clip.sample_rate_hz};
  const auto window = hann_window(frame_len);
  detail::RealFft fft(frame_len);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double* src = clip.samples.data() + f * hop;
    double* in = fft.input();
    for (int i = 0; i < frame_len; ++i) in[i] = src[i] * window[static_cast<std::size_t>(i)];
    fft.execute();
    const fftw_complex* out = fft.output();
    for (int k = 0; k <= frame_len / 2; ++k) {
      spec.frames(static_cast<Eigen::Index>(f), k) = std::hypot(out[k][0], out[k][1]);
    }
  }
  return spec;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filterbank over linear FFT bins. Each row is peak-normalized
/// so that its largest weight is exactly 1.
struct MelBank {
  Matrix weights;  // n_mels x n_bins
  std::vector<double> center_freqs_hz;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;
  int frame_len = 0;
  int sample_rate_hz = 0;

  int n_mels() const { return static_cast<int>(weights.rows()); }
  int n_bins() const { return static_cast<int>(weights.cols()); }
};

inline MelBank make_mel_bank(int n_mels, int frame_len, int sample_rate_hz,
                             double fmin_hz = 50.0, double fmax_hz = 0.0) {
  const double nyquist = sample_rate_hz / 2.0;
  if (fmax_hz <= 0.0) fmax_hz = nyquist;
  if (n_mels <= 0 || !is_power_of_two(frame_len) || sample_rate_hz <= 0 ||
      fmin_hz < 0.0 || fmin_hz >= fmax_hz || fmax_hz > nyquist) {
    throw Error(ErrorCode::kInvalidArgument, "invalid mel bank parameters");
  }
  const int n_bins = frame_len / 2 + 1;
  const double bin_hz = static_cast<double>(sample_rate_hz) / frame_len;
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }

  MelBank bank{Matrix::Zero(n_mels, n_bins), {}, fmin_hz, fmax_hz, frame_len, sample_rate_hz};
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    bank.center_freqs_hz.push_back(center);
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f <= center) w = (f - lo) / (center - lo);
      else if (f > center && f < hi) w = (hi - f) / (hi - center);
      bank.weights(m, k) = w;
    }
    // Narrow low-frequency triangles may fall between bins.
    if (bank.weights.row(m).maxCoeff() <= 0.0) {
      const int k = std::clamp(static_cast<int>(std::lround(center / bin_hz)), 0, n_bins - 1);
      bank.weights(m, k) = 1.0;
    }
    bank.weights.row(m) /= bank.weights.row(m).maxCoeff();
  }
  return bank;
}

enum class FeatureKind : std::uint32_t { kLogMel = 1, kMfcc = 2, kLearnedLayer1 = 3, kLearnedLayer2 = 4 };

inline std::string feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kLogMel: return "log-mel";
    case FeatureKind::kMfcc: return "mfcc";
    case FeatureKind::kLearnedLayer1: return "learned-layer1";
    case FeatureKind::kLearnedLayer2: return "learned-layer2";
  }
  return "unknown";
}

struct FeatureFrames {
  Matrix vectors;  // n_frames x dim
  FeatureKind kind = FeatureKind::kLogMel;
};

inline FeatureFrames log_mel(const Spectrogram& spec, const MelBank& bank, double floor = 1e-10) {
  if (spec.frames.cols() != bank.weights.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "mel bank does not match spectrogram bins");
  }
  Matrix energy = spec.frames.array().square().matrix() * bank.weights.transpose();
  return {(energy.array() + floor).log().matrix(), FeatureKind::kLogMel};
}

/// Orthonormal DCT-II of x (c0 included).
inline std::vector<double> dct_ii(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> c(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    c[k] = scale * acc;
  }
  return c;
}

/// Inverse of dct_ii (orthonormal DCT-III).
inline std::vector<double> dct_iii(std::span<const double> c) {
  const std::size_t n = c.size();
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = c[0] * std::sqrt(1.0 / n);
    for (std::size_t k = 1; k < n; ++k) {
      acc += c[k] * std::sqrt(2.0 / n) *
             std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
    x[i] = acc;
  }
  return x;
}

inline FeatureFrames mfcc(const FeatureFrames& logmel, int n_coeffs = 13) {
  if (logmel.kind != FeatureKind::kLogMel) {
    throw Error(ErrorCode::kInvalidArgument, "mfcc expects log-mel input");
  }
  const auto n_mels = logmel.vectors.cols();
  if (n_coeffs <= 0 || n_coeffs > n_mels) {
    throw Error(ErrorCode::kInvalidArgument, "n_coeffs must be in [1, n_mels]");
  }
  // DCT basis as a matrix so the per-frame transform is one product.
  Matrix basis(n_mels, n_coeffs);
  for (Eigen::Index k = 0; k < n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels);
    for (Eigen::Index i = 0; i < n_mels; ++i) {
      basis(i, k) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n_mels));
    }
  }
  return {logmel.vectors * basis, FeatureKind::kMfcc};
}

struct FeatureStats {
  Vector mean;
  Vector stddev;
};

inline constexpr double kVarianceClamp = 1e-8;

inline FeatureStats compute_stats(const Matrix& frames) {
  if (frames.rows() == 0) throw Error(ErrorCode::kInsufficientData, "no frames to standardize");
  FeatureStats stats;
  stats.mean = frames.colwise().mean().transpose();
  Vector var = (frames.rowwise() - stats.mean.transpose()).array().square().colwise().mean().transpose();
  stats.stddev = var.cwiseMax(kVarianceClamp).cwiseSqrt();
  return stats;
}

/// Per-dimension z-scoring. Without stats, they are computed from `frames`
/// and returned for reuse on held-out data. Zero variance is clamped.
inline std::pair<Matrix, FeatureStats> standardize(const Matrix& frames,
                                                   const std::optional<FeatureStats>& stats = {}) {
  FeatureStats s = stats ? *stats : compute_stats(frames);
  if (s.mean.size() != frames.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "stats dimension mismatch");
  }
  Matrix out = (frames.rowwise() - s.mean.transpose()).array().rowwise() /
               s.stddev.transpose().array();
  return {std::move(out), std::move(s)};
}

/// Front-end parameters. Frequencies are absolute; the mel bank is rebuilt
/// for each clip's sample rate.
struct FrontEndConfig {
  FeatureKind kind = FeatureKind::kMfcc;
  int frame_len = 1024;
  int hop = 512;
  int n_mels = 40;
  double fmin_hz = 50.0;
  double fmax_hz = 0.0;  // 0 = Nyquist
  int n_mfcc = 13;
  double log_floor = 1e-10;

  static FrontEndConfig for_mfcc() { return {}; }
  static FrontEndConfig for_dictionary() {
    FrontEndConfig c;
    c.kind = FeatureKind::kLogMel;
    c.n_mels = 32;
    return c;
  }

  std::string canonical() const {
    std::ostringstream s;
    s.precision(17);
    s << "kind=" << feature_kind_name(kind) << ";frame=" << frame_len << ";hop=" << hop
      << ";mels=" << n_mels << ";fmin=" << fmin_hz << ";fmax=" << fmax_hz
      << ";mfcc=" << (kind == FeatureKind::kMfcc ? n_mfcc : 0) << ";floor=" << log_floor;
    return s.str();
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }

  bool operator==(const FrontEndConfig&) const = default;
};

inline FeatureFrames extract_features(const AudioClip& clip, const FrontEndConfig& cfg) {
  const Spectrogram spec = stft(clip, cfg.frame_len, cfg.hop);
  const MelBank bank = make_mel_bank(cfg.n_mels, cfg.frame_len, clip.sample_rate_hz,
                                     cfg.fmin_hz, cfg.fmax_hz);
  FeatureFrames lm = log_mel(spec, bank, cfg.log_floor);
  if (cfg.kind == FeatureKind::kMfcc) return mfcc(lm, cfg.n_mfcc);
  if (cfg.kind != FeatureKind::kLogMel) {
    throw Error(ErrorCode::kInvalidArgument, "front end produces log-mel or mfcc only");
  }
  return lm;
}

// Feature cache layout (little-endian):
//   0  char[4]  magic "AVBF"
//   4  u32      version (1)
//   8  u32      kind (FeatureKind)
//  12  u32      rows
//  16  u32      cols
//  20  u64      front-end config hash
//  28  f32[rows*cols] row-major payload
inline constexpr std::uint32_t kFeatureCacheVersion = 1;

struct CachedFeatures {
  FeatureFrames frames;
  std::uint64_t config_hash = 0;
};

inline std::string encode_feature_cache(const FeatureFrames& f, std::uint64_t config_hash) {
  std::string out("AVBF");
  detail::put_u32(out, kFeatureCacheVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(f.kind));
  detail::put_u32(out, static_cast<std::uint32_t>(f.vectors.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(f.vectors.cols()));
  detail::put_u32(out, static_cast<std::uint32_t>(config_hash & 0xffffffffu));
  detail::put_u32(out, static_cast<std::uint32_t>(config_hash >> 32));
  for (Eigen::Index r = 0; r < f.vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < f.vectors.cols(); ++c) {
      const float v = static_cast<float>(f.vectors(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline CachedFeatures decode_feature_cache(std::span<const unsigned char> bytes) {
  using detail::read_u32;
  if (bytes.size() < 28 || std::memcmp(bytes.data(), "AVBF", 4) != 0) {
    throw Error(ErrorCode::kFormat, "not a feature cache file");
  }
  if (read_u32(bytes.data() + 4) != kFeatureCacheVersion) {
    throw Error(ErrorCode::kUnsupported, "unsupported feature cache version");
  }
  const auto kind = static_cast<FeatureKind>(read_u32(bytes.data() + 8));
  const std::uint32_t rows = read_u32(bytes.data() + 12);
  const std::uint32_t cols = read_u32(bytes.data() + 16);
  const std::uint64_t hash = static_cast<std::uint64_t>(read_u32(bytes.data() + 20)) |
                             (static_cast<std::uint64_t>(read_u32(bytes.data() + 24)) << 32);
  if (bytes.size() != 28 + 4ull * rows * cols) {
    throw Error(ErrorCode::kFormat, "feature cache payload size mismatch");
  }
  CachedFeatures out{{Matrix(rows, cols), kind}, hash};
  const unsigned char* p = bytes.data() + 28;
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c, p += 4) {
      const std::uint32_t bits = read_u32(p);
      float v;
      std::memcpy(&v, &bits, sizeof v);
      out.frames.vectors(r, c) = v;
    }
  }
  return out;
}

inline void write_feature_cache(const FeatureFrames& f, std::uint64_t config_hash,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::string bytes = encode_feature_cache(f, config_hash);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline CachedFeatures read_feature_cache(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_feature_cache(bytes);
}

}  // namespace avibench
