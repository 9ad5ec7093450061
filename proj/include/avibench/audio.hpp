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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "avibench/common.hpp"

namespace avibench {

inline constexpr int kCanonicalSampleRate = 44100;
inline constexpr double kPcm16Step = 1.0 / 32768.0;

/// A mono clip of real amplitudes in [-1, 1).
struct AudioClip {
  std::string id;
  std::vector<double> samples;
  int sample_rate_hz = kCanonicalSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

inline double peak_amplitude(std::span<const double> samples) {
  double peak = 0.0;
  for (double s : samples) peak = std::max(peak, std::abs(s));
  return peak;
}

inline double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::int16_t quantize_pcm16(double x) {
  const double scaled = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace detail

struct WavReadOptions {
  // Average all channels into one instead of rejecting multi-channel input.
  bool downmix = false;
};

/// Decodes a RIFF/WAVE byte buffer holding 16-bit integer PCM.
inline AudioClip decode_wav(std::span<const unsigned char> bytes, std::string id,
                            const WavReadOptions& opts = {}) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kFormat, "not-a-wav: missing RIFF/WAVE header");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::span<const unsigned char> data;
  bool have_data = false;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw Error(ErrorCode::kFormat, "not-a-wav: short fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && avail >= 26) format = read_u16(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.subspan(body, avail);
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || !have_data) {
    throw Error(ErrorCode::kFormat, "not-a-wav: missing fmt or data chunk");
  }
  if (format != 1) throw Error(ErrorCode::kUnsupported, "not-a-wav: not integer PCM");
  if (bits != 16) {
    throw Error(ErrorCode::kUnsupported,
                "unsupported bit depth: " + std::to_string(bits));
  }
  if (channels == 0 || rate == 0) throw Error(ErrorCode::kFormat, "not-a-wav: bad fmt fields");
  if (channels > 1 && !opts.downmix) {
    throw Error(ErrorCode::kUnsupported,
                "multi-channel input (" + std::to_string(channels) +
                    " channels); enable downmix to average channels");
  }

  const std::size_t frame_bytes = 2u * channels;
  const std::size_t n_frames = data.size() / frame_bytes;
  AudioClip clip{std::move(id), std::vector<double>(n_frames),
                 static_cast<int>(rate)};
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto raw = static_cast<std::int16_t>(
          read_u16(data.data() + i * frame_bytes + 2 * c));
      acc += static_cast<double>(raw) / 32768.0;
    }
    clip.samples[i] = acc / channels;
  }
  if (clip.samples.empty()) throw Error(ErrorCode::kFormat, "not-a-wav: no samples");
  return clip;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline AudioClip read_wav(const std::filesystem::path& path,
                          const WavReadOptions& opts = {}) {
  const auto bytes = read_file_bytes(path);
  return decode_wav(bytes, path.stem().string(), opts);
}

/// 16-bit mono PCM encoding; samples are rounded and clipped to the int16 range.
inline std::string encode_wav(const AudioClip& clip) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  detail::put_u32(out, 36 + data_bytes);
  out.append("WAVEfmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.append("data");
  detail::put_u32(out, data_bytes);
  for (double s : clip.samples) {
    detail::put_u16(out, static_cast<std::uint16_t>(detail::quantize_pcm16(s)));
  }
  return out;
}

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::string bytes = encode_wav(clip);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

struct NormalizedClip {
  AudioClip clip;
  bool silent = false;
};

/// Peak normalization to -headroom_db dBFS (the `sox gain -n -2` behaviour).
/// An all-zero clip is returned untouched with `silent` set.
inline NormalizedClip normalize_peak(const AudioClip& clip, double headroom_db = 2.0) {
  if (clip.samples.empty()) throw Error(ErrorCode::kInvalidArgument, "empty clip");
  const double peak = peak_amplitude(clip.samples);
  if (peak == 0.0) return {clip, true};
  const double target = std::pow(10.0, -headroom_db / 20.0);
  NormalizedClip out{clip, false};
  const double gain = target / peak;
  for (double& s : out.clip.samples) s *= gain;
  return out;
}

inline std::size_t segment_count(std::size_t n_samples, std::size_t seg_len) {
  return n_samples / seg_len + ((n_samples % seg_len) * 2 >= seg_len ? 1 : 0);
}

/// Splits a recording into consecutive non-overlapping clips of clip_len_s.
/// A trailing remainder of at least half a clip is zero-padded and kept;
/// shorter remainders are dropped.
inline std::vector<AudioClip> segment(const AudioClip& clip, double clip_len_s) {
  if (!(clip_len_s > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "clip length must be positive");
  }
  const auto seg_len = static_cast<std::size_t>(std::llround(clip_len_s * clip.sample_rate_hz));
  if (seg_len == 0) throw Error(ErrorCode::kInvalidArgument, "clip length below one sample");
  const std::size_t n = segment_count(clip.samples.size(), seg_len);
  const std::size_t width = std::max<std::size_t>(3, std::to_string(n == 0 ? 0 : n - 1).size());

  std::vector<AudioClip> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string index = std::to_string(i);
    index.insert(0, width - index.size(), '0');
    AudioClip child{clip.id + "_" + index, std::vector<double>(seg_len, 0.0),
                    clip.sample_rate_hz};
    const std::size_t begin = i * seg_len;
    const std::size_t end = std::min(begin + seg_len, clip.samples.size());
    std::copy(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
              clip.samples.begin() + static_cast<std::ptrdiff_t>(end), child.samples.begin());
    out.push_back(std::move(child));
  }
  return out;
}

}  // namespace avibench
