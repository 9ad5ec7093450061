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

// Deterministic synthetic soundscapes with labelled bird and distractor events.
//
// Bird kinds are FM chirps and very short "chink" calls; distractors are rain,
// insects and speech-like babble. Each site profile fixes the background,
// event mix and SNR range, so datasets drawn from two profiles differ in a
// controlled way.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "avibench/audio.hpp"
#include "avibench/common.hpp"
#include "avibench/manifest.hpp"
#include "avibench/rng.hpp"
#include "json.hpp"

namespace avibench {

enum class EventKind { kChirp, kChink, kRain, kInsect, kSpeech };

inline constexpr std::array<EventKind, 5> kAllEventKinds = {EventKind::kChirp, EventKind::kChink, EventKind::kRain,
                                                             EventKind::kInsect, EventKind::kSpeech};

inline std::string event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kChirp: return "chirp";
    case EventKind::kChink: return "chink";
    case EventKind::kRain: return "rain";
    case EventKind::kInsect: return "insect";
    case EventKind::kSpeech: return "speech-like";
  }
  return "unknown";
}

inline EventKind parse_event_kind(const std::string& s) {
  for (EventKind k : kAllEventKinds) {
    if (event_kind_name(k) == s) return k;
  }
  throw Error(ErrorCode::kFormat, "unknown event kind " + s);
}

inline bool is_bird_kind(EventKind k) { return k == EventKind::kChirp || k == EventKind::kChink; }

struct EventSpec {
  EventKind kind = EventKind::kChirp;
  double onset_s = 0;
  double duration_s = 0;
  double snr_db = 0;
  // Kind parameters; unused ones stay zero.
  double start_hz = 0;       // chirp
  double end_hz = 0;         // chirp
  double burst_ms = 0;       // chink
  double center_hz = 0;      // chink resonance, insect carrier, speech formant
  double am_rate_hz = 0;     // insect
  double drop_density = 0;   // rain, drops per second
  std::uint64_t seed = 0;    // stochastic kinds
};

enum class NoiseColor { kWhite, kPink };

struct SiteProfile {
  std::string name;
  NoiseColor noise_color = NoiseColor::kPink;
  double noise_level_dbfs = -30;
  double gust_depth = 0;  // slow amplitude modulation of the background, 0..1
  // Mix weights over kAllEventKinds order: chirp, chink, rain, insect, speech-like.
  std::array<double, 5> event_weights{0.3, 0.2, 0.2, 0.15, 0.15};
  double positive_rate = 0.5;
  double snr_min_db = -10;
  double snr_max_db = 5;
  double distractor_snr_min_db = -5;
  double distractor_snr_max_db = 10;
  double distractors_per_clip = 1.0;
  double extra_bird_events = 1.0;  // mean additional bird events in a positive clip
  double chirp_low_hz = 2000;
  double chirp_high_hz = 6000;
  double reverb_tail_s = 0.2;

  void validate() const {
    double sum = 0;
    for (double w : event_weights) {
      if (w < 0) throw Error(ErrorCode::kInvalidArgument, "event weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "event weights must sum to 1");
    if (event_weights[0] + event_weights[1] <= 0) {
      throw Error(ErrorCode::kInvalidArgument, "profile needs a bird event kind");
    }
    if (positive_rate < 0 || positive_rate > 1) throw Error(ErrorCode::kInvalidArgument, "positive rate outside [0,1]");
    if (snr_min_db > snr_max_db || distractor_snr_min_db > distractor_snr_max_db) {
      throw Error(ErrorCode::kInvalidArgument, "SNR range is inverted");
    }
    if (reverb_tail_s < 0 || distractors_per_clip < 0 || extra_bird_events < 0) {
      throw Error(ErrorCode::kInvalidArgument, "negative profile parameter");
    }
    if (!(chirp_low_hz > 0 && chirp_low_hz < chirp_high_hz)) {
      throw Error(ErrorCode::kInvalidArgument, "chirp band is invalid");
    }
  }
};

/// Quiet pink background, moderate SNR, few distractors.
inline SiteProfile site_a_profile() {
  SiteProfile p;
  p.name = "siteA";
  p.noise_color = NoiseColor::kPink;
  p.noise_level_dbfs = -35;
  p.gust_depth = 0.1;
  p.event_weights = {0.45, 0.15, 0.15, 0.1, 0.15};
  p.snr_min_db = -6;
  p.snr_max_db = 9;
  p.distractor_snr_min_db = -6;
  p.distractor_snr_max_db = 6;
  p.distractors_per_clip = 1.0;
  p.extra_bird_events = 3.0;
  p.chirp_low_hz = 2000;
  p.chirp_high_hz = 5000;
  p.reverb_tail_s = 0.15;
  return p;
}

/// Loud gusty pink background, low SNR, insect-heavy, higher-pitched birds.
inline SiteProfile site_b_profile() {
  SiteProfile p;
  p.name = "siteB";
  p.noise_color = NoiseColor::kPink;
  p.noise_level_dbfs = -22;
  p.gust_depth = 0.6;
  p.event_weights = {0.3, 0.25, 0.1, 0.3, 0.05};
  p.snr_min_db = -10;
  p.snr_max_db = 4;
  p.distractor_snr_min_db = -4;
  p.distractor_snr_max_db = 8;
  p.distractors_per_clip = 0.5;
  p.extra_bird_events = 2.0;
  p.chirp_low_hz = 3500;
  p.chirp_high_hz = 8000;
  p.reverb_tail_s = 0.4;
  return p;
}

inline SiteProfile builtin_profile(const std::string& name) {
  if (name == "siteA") return site_a_profile();
  if (name == "siteB") return site_b_profile();
  throw Error(ErrorCode::kInvalidArgument, "unknown profile '" + name + "' (expected siteA or siteB)");
}

namespace detail {

inline void raised_cosine_envelope(std::vector<double>& x, double ramp_fraction = 0.25) {
  const std::size_t n = x.size();
  const std::size_t ramp = std::max<std::size_t>(1, static_cast<std::size_t>(n * ramp_fraction));
  for (std::size_t i = 0; i < n; ++i) {
    double g = 1.0;
    if (i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
    else if (n - 1 - i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - 1 - i) / ramp);
    x[i] *= g;
  }
}

// Two-pole resonator (constant 0 dB peak gain band-pass).
inline void resonate(std::vector<double>& x, double center_hz, double bandwidth_hz, int rate) {
  const double r = std::exp(-std::numbers::pi * bandwidth_hz / rate);
  const double theta = 2.0 * std::numbers::pi * center_hz / rate;
  const double a1 = -2.0 * r * std::cos(theta), a2 = r * r;
  const double gain = (1.0 - r * r) / 2.0;
  double y1 = 0, y2 = 0, x2 = 0, x1 = 0;
  for (double& v : x) {
    const double in = v;
    const double y = gain * (in - x2) - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = in;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

inline void normalize_rms(std::vector<double>& x) {
  const double r = rms(x);
  if (r > 0) {
    for (double& v : x) v /= r;
  }
}

inline std::size_t poisson(Rng& rng, double mean) {
  const double limit = std::exp(-mean);
  std::size_t k = 0;
  double p = rng.uniform();
  while (p > limit) {
    ++k;
    p *= rng.uniform();
  }
  return k;
}

}  // namespace detail

/// Unit-RMS waveform for one event (before SNR scaling and reverb).
inline std::vector<double> synth_event(const EventSpec& spec, int sample_rate) {
  const double nyquist = sample_rate / 2.0;
  if (!(spec.duration_s > 0)) throw Error(ErrorCode::kInvalidArgument, "event duration must be positive");
  if (sample_rate <= 0) throw Error(ErrorCode::kInvalidArgument, "sample rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * sample_rate));
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "event shorter than two samples");
  std::vector<double> x(n, 0.0);
  Rng rng(spec.seed);
  const double dt = 1.0 / sample_rate;
  auto check_hz = [&](double hz, const char* what) {
    if (!(hz > 0 && hz < nyquist)) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " outside (0, Nyquist)");
  };

  switch (spec.kind) {
    case EventKind::kChirp: {
      check_hz(spec.start_hz, "chirp start");
      check_hz(spec.end_hz, "chirp end");
      // Linear FM: instantaneous frequency moves from start to end.
      const double k = (spec.end_hz - spec.start_hz) / spec.duration_s;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        x[i] = std::sin(2.0 * std::numbers::pi * (spec.start_hz * t + 0.5 * k * t * t));
      }
      detail::raised_cosine_envelope(x);
      break;
    }
    case EventKind::kChink: {
      check_hz(spec.center_hz, "chink center");
      if (!(spec.burst_ms > 0 && spec.burst_ms < 30)) throw Error(ErrorCode::kInvalidArgument, "chink burst must be in (0, 30) ms");
      if (spec.duration_s * 1000.0 + 1e-9 < spec.burst_ms) throw Error(ErrorCode::kInvalidArgument, "chink burst longer than event");
      const auto burst = std::max<std::size_t>(2, static_cast<std::size_t>(spec.burst_ms * 1e-3 * sample_rate));
      for (std::size_t i = 0; i < burst; ++i) {
        const double decay = std::exp(-5.0 * static_cast<double>(i) / burst);
        x[i] = rng.normal() * decay;
      }
      detail::resonate(x, spec.center_hz, spec.center_hz / 8.0, sample_rate);
      for (std::size_t i = burst; i < n; ++i) x[i] = 0.0;  // strictly within the burst
      break;
    }
    case EventKind::kRain: {
      if (!(spec.drop_density > 0)) throw Error(ErrorCode::kInvalidArgument, "rain drop density must be positive");
      const auto n_drops = std::max<std::size_t>(1, static_cast<std::size_t>(spec.drop_density * spec.duration_s));
      const auto drop_len = static_cast<std::size_t>(0.004 * sample_rate);
      for (std::size_t d = 0; d < n_drops; ++d) {
        const std::size_t at = rng.index(n);
        const double amp = rng.uniform(0.3, 1.0);
        std::vector<double> drop(drop_len);
        for (std::size_t i = 0; i < drop_len; ++i) drop[i] = rng.normal() * std::exp(-8.0 * static_cast<double>(i) / drop_len);
        detail::resonate(drop, rng.uniform(1500.0, std::min(9000.0, 0.8 * nyquist)), 3000.0, sample_rate);
        for (std::size_t i = 0; i < drop_len && at + i < n; ++i) x[at + i] += amp * drop[i];
      }
      break;
    }
    case EventKind::kInsect: {
      check_hz(spec.center_hz, "insect carrier");
      if (!(spec.am_rate_hz > 0)) throw Error(ErrorCode::kInvalidArgument, "insect AM rate must be positive");
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        const double am = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * spec.am_rate_hz * t + phase);
        x[i] = am * am * std::sin(2.0 * std::numbers::pi * spec.center_hz * t);
      }
      detail::raised_cosine_envelope(x, 0.05);
      break;
    }
    case EventKind::kSpeech: {
      check_hz(spec.center_hz, "speech formant");
      // Jittered glottal pulse train through two formant resonators, with
      // syllabic amplitude modulation at 3-5 Hz.
      const double f0 = rng.uniform(100.0, 220.0);
      const double syll = rng.uniform(3.0, 5.0);
      double next = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<double>(i) >= next) {
          x[i] = 1.0;
          next += sample_rate / (f0 * rng.uniform(0.97, 1.03));
        }
      }
      std::vector<double> second = x;
      detail::resonate(x, spec.center_hz, 120.0, sample_rate);
      detail::resonate(second, std::min(2.5 * spec.center_hz, 0.8 * nyquist), 200.0, sample_rate);
      for (std::size_t i = 0; i < n; ++i) {
        const double s = std::sin(std::numbers::pi * syll * static_cast<double>(i) * dt);
        x[i] = (x[i] + 0.5 * second[i]) * s * s;
      }
      detail::raised_cosine_envelope(x, 0.05);
      break;
    }
  }
  detail::normalize_rms(x);
  return x;
}

/// Background noise with unit RMS before level scaling.
inline std::vector<double> synth_noise(std::size_t n, NoiseColor color, double gust_depth, int rate, Rng& rng) {
  std::vector<double> x(n);
  if (color == NoiseColor::kWhite) {
    for (double& v : x) v = rng.normal();
  } else {
    // Paul Kellet's pink filter.
    double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
    for (double& v : x) {
      const double w = rng.normal();
      b0 = 0.99886 * b0 + w * 0.0555179;
      b1 = 0.99332 * b1 + w * 0.0750759;
      b2 = 0.96900 * b2 + w * 0.1538520;
      b3 = 0.86650 * b3 + w * 0.3104856;
      b4 = 0.55000 * b4 + w * 0.5329522;
      b5 = -0.7616 * b5 - w * 0.0168980;
      v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
      b6 = w * 0.115926;
    }
  }
  if (gust_depth > 0) {
    const double rate_hz = rng.uniform(0.2, 0.8);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / rate;
      x[i] *= 1.0 + gust_depth * std::sin(2.0 * std::numbers::pi * rate_hz * t + phase);
    }
  }
  detail::normalize_rms(x);
  return x;
}

/// Sparse exponentially decaying echoes: h = delta + sum_k g^(d_k / tail) delta(n - d_k).
inline std::vector<double> apply_reverb(const std::vector<double>& dry, double tail_s, int rate, std::uint64_t seed) {
  if (tail_s <= 0) return dry;
  const auto tail = static_cast<std::size_t>(tail_s * rate);
  std::vector<double> wet(dry.size() + tail, 0.0);
  std::copy(dry.begin(), dry.end(), wet.begin());
  Rng rng(seed);
  constexpr int kTaps = 24;
  for (int k = 0; k < kTaps; ++k) {
    const std::size_t d = 1 + rng.index(tail);
    const double g = 0.6 * std::exp(-4.0 * static_cast<double>(d) / static_cast<double>(tail)) * (rng.bernoulli(0.5) ? 1 : -1);
    for (std::size_t i = 0; i < dry.size(); ++i) wet[i + d] += g * dry[i];
  }
  return wet;
}

struct SynthClip {
  AudioClip clip;
  bool has_bird = false;
  std::vector<EventSpec> events;
  // Components before the final mix (same length as the clip, same gain).
  std::vector<double> noise;
  std::vector<double> event_track;
};

namespace detail {

inline EventKind draw_kind(Rng& rng, const std::array<double, 5>& w, bool bird) {
  double total = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    if (is_bird_kind(kAllEventKinds[i]) == bird) total += w[i];
  }
  if (total <= 0) return bird ? EventKind::kChirp : EventKind::kRain;
  double u = rng.uniform() * total;
  EventKind last = EventKind::kChirp;
  for (std::size_t i = 0; i < 5; ++i) {
    if (is_bird_kind(kAllEventKinds[i]) != bird || w[i] <= 0) continue;
    last = kAllEventKinds[i];
    u -= w[i];
    if (u < 0) return last;
  }
  return last;
}

inline EventSpec draw_event(Rng& rng, EventKind kind, const SiteProfile& p, double clip_len_s, int rate) {
  EventSpec e;
  e.kind = kind;
  e.seed = rng.next();
  const double nyquist = rate / 2.0;
  switch (kind) {
    case EventKind::kChirp: {
      e.duration_s = rng.uniform(0.08, 0.4);
      const double hi = std::min(p.chirp_high_hz, 0.9 * nyquist);
      const double a = rng.uniform(p.chirp_low_hz, hi), b = rng.uniform(p.chirp_low_hz, hi);
      e.start_hz = a;
      e.end_hz = b;
      e.snr_db = rng.uniform(p.snr_min_db, p.snr_max_db);
      break;
    }
    case EventKind::kChink:
      e.burst_ms = rng.uniform(5.0, 25.0);
      e.duration_s = e.burst_ms / 1000.0;
      e.center_hz = rng.uniform(p.chirp_low_hz, std::min(p.chirp_high_hz, 0.9 * nyquist));
      e.snr_db = rng.uniform(p.snr_min_db, p.snr_max_db) + 6.0;  // short and impulsive
      break;
    case EventKind::kRain:
      e.duration_s = rng.uniform(1.0, std::min(6.0, clip_len_s));
      e.drop_density = rng.uniform(5.0, 40.0);
      e.snr_db = rng.uniform(p.distractor_snr_min_db, p.distractor_snr_max_db);
      break;
    case EventKind::kInsect:
      e.duration_s = rng.uniform(1.0, std::min(8.0, clip_len_s));
      e.center_hz = rng.uniform(4000.0, std::min(9000.0, 0.9 * nyquist));
      e.am_rate_hz = rng.uniform(15.0, 60.0);
      e.snr_db = rng.uniform(p.distractor_snr_min_db, p.distractor_snr_max_db);
      break;
    case EventKind::kSpeech:
      e.duration_s = rng.uniform(0.5, std::min(3.0, clip_len_s));
      e.center_hz = rng.uniform(500.0, 1500.0);
      e.snr_db = rng.uniform(p.distractor_snr_min_db, p.distractor_snr_max_db);
      break;
  }
  e.duration_s = std::min(e.duration_s, clip_len_s);
  e.onset_s = rng.uniform(0.0, clip_len_s - e.duration_s);
  return e;
}

}  // namespace detail

/// Renders one event into the track so that its RMS over [onset, onset + duration)
/// sits snr_db above the background RMS over the same span.
inline void render_event(const EventSpec& e, const std::vector<double>& noise, std::vector<double>& track, int rate,
                         double reverb_tail_s) {
  const std::vector<double> dry = synth_event(e, rate);
  const std::vector<double> wet = apply_reverb(dry, reverb_tail_s, rate, splitmix64(e.seed));
  const auto begin = static_cast<std::size_t>(std::llround(e.onset_s * rate));
  const std::size_t span = std::min(dry.size(), noise.size() - std::min(begin, noise.size()));
  if (span == 0) return;
  const double noise_rms = rms(std::span<const double>(noise.data() + begin, span));
  const double event_rms = rms(std::span<const double>(wet.data(), span));
  if (event_rms == 0) return;
  const double gain = noise_rms * std::pow(10.0, e.snr_db / 20.0) / event_rms;
  for (std::size_t i = 0; i < wet.size() && begin + i < track.size(); ++i) track[begin + i] += gain * wet[i];
}

inline SynthClip synth_clip(const SiteProfile& profile, bool has_bird, double clip_len_s, std::uint64_t seed,
                            const std::string& id = "clip", int sample_rate = kCanonicalSampleRate) {
  profile.validate();
  if (!(clip_len_s > 0)) throw Error(ErrorCode::kInvalidArgument, "clip length must be positive");
  const auto n = static_cast<std::size_t>(std::llround(clip_len_s * sample_rate));
  Rng rng(seed);
  SynthClip out;
  out.has_bird = has_bird;
  Rng noise_rng(rng.next());
  out.noise = synth_noise(n, profile.noise_color, profile.gust_depth, sample_rate, noise_rng);
  const double level = std::pow(10.0, profile.noise_level_dbfs / 20.0);
  for (double& v : out.noise) v *= level;

  if (has_bird) {
    const std::size_t n_bird = 1 + detail::poisson(rng, profile.extra_bird_events);
    for (std::size_t i = 0; i < n_bird; ++i) {
      out.events.push_back(detail::draw_event(rng, detail::draw_kind(rng, profile.event_weights, true), profile,
                                              clip_len_s, sample_rate));
    }
  }
  const std::size_t n_distract = detail::poisson(rng, profile.distractors_per_clip);
  for (std::size_t i = 0; i < n_distract; ++i) {
    out.events.push_back(detail::draw_event(rng, detail::draw_kind(rng, profile.event_weights, false), profile,
                                            clip_len_s, sample_rate));
  }

  out.event_track.assign(n, 0.0);
  for (const auto& e : out.events) render_event(e, out.noise, out.event_track, sample_rate, profile.reverb_tail_s);

  out.clip.id = id;
  out.clip.sample_rate_hz = sample_rate;
  out.clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.clip.samples[i] = out.noise[i] + out.event_track[i];
  // Keep the mix inside 16-bit range; scaling everything preserves every SNR.
  const double peak = peak_amplitude(out.clip.samples);
  if (peak > 0.99) {
    const double g = 0.99 / peak;
    for (double& v : out.clip.samples) v *= g;
    for (double& v : out.noise) v *= g;
    for (double& v : out.event_track) v *= g;
  }
  return out;
}

inline nlohmann::json event_json(const EventSpec& e) {
  nlohmann::json j{{"kind", event_kind_name(e.kind)},
                   {"onset_s", e.onset_s},
                   {"duration_s", e.duration_s},
                   {"snr_db", e.snr_db},
                   {"seed", e.seed}};
  switch (e.kind) {
    case EventKind::kChirp: j["start_hz"] = e.start_hz; j["end_hz"] = e.end_hz; break;
    case EventKind::kChink: j["burst_ms"] = e.burst_ms; j["center_hz"] = e.center_hz; break;
    case EventKind::kRain: j["drop_density"] = e.drop_density; break;
    case EventKind::kInsect: j["center_hz"] = e.center_hz; j["am_rate_hz"] = e.am_rate_hz; break;
    case EventKind::kSpeech: j["center_hz"] = e.center_hz; break;
  }
  return j;
}

inline EventSpec event_from_json(const nlohmann::json& j) {
  EventSpec e;
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  e.onset_s = j.at("onset_s").get<double>();
  e.duration_s = j.at("duration_s").get<double>();
  e.snr_db = j.at("snr_db").get<double>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.start_hz = j.value("start_hz", 0.0);
  e.end_hz = j.value("end_hz", 0.0);
  e.burst_ms = j.value("burst_ms", 0.0);
  e.center_hz = j.value("center_hz", 0.0);
  e.am_rate_hz = j.value("am_rate_hz", 0.0);
  e.drop_density = j.value("drop_density", 0.0);
  return e;
}

inline nlohmann::json profile_json(const SiteProfile& p) {
  return {{"name", p.name},
          {"noise", {{"color", p.noise_color == NoiseColor::kPink ? "pink" : "white"},
                     {"level_dbfs", p.noise_level_dbfs},
                     {"gust_depth", p.gust_depth}}},
          {"event_weights", {{"chirp", p.event_weights[0]}, {"chink", p.event_weights[1]}, {"rain", p.event_weights[2]},
                             {"insect", p.event_weights[3]}, {"speech-like", p.event_weights[4]}}},
          {"positive_rate", p.positive_rate},
          {"snr_db", {p.snr_min_db, p.snr_max_db}},
          {"distractor_snr_db", {p.distractor_snr_min_db, p.distractor_snr_max_db}},
          {"distractors_per_clip", p.distractors_per_clip},
          {"extra_bird_events", p.extra_bird_events},
          {"chirp_band_hz", {p.chirp_low_hz, p.chirp_high_hz}},
          {"reverb_tail_s", p.reverb_tail_s}};
}

struct GeneratedDataset {
  DatasetManifest manifest;
  nlohmann::json event_log;  // item id -> list of events
};

struct GenerateOptions {
  double clip_len_s = 10.0;
  int sample_rate = kCanonicalSampleRate;
  int threads = 1;
  std::string id_prefix;  // defaults to the profile name
};

/// Exactly round(n * positive_rate) positives, placed by a seeded shuffle.
/// Writes audio/<id>.wav, manifest.csv and events.json under out_dir.
inline GeneratedDataset generate_dataset(const SiteProfile& profile, std::size_t n_items, std::uint64_t seed,
                                         const std::filesystem::path& out_dir, const GenerateOptions& opt = {}) {
  profile.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  if (ec || !std::filesystem::is_directory(out_dir / "audio")) {
    throw Error(ErrorCode::kIo, "cannot create dataset directory " + out_dir.string());
  }
  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n_items) * profile.positive_rate));
  std::vector<int> labels(n_items, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
  Rng label_rng(derive_seed(seed, "labels"));
  label_rng.shuffle(labels);

  const std::string prefix = opt.id_prefix.empty() ? profile.name : opt.id_prefix;
  const std::size_t width = std::max<std::size_t>(5, std::to_string(n_items).size());
  std::vector<std::string> ids(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    std::string idx = std::to_string(i);
    ids[i] = prefix + "_" + std::string(width - idx.size(), '0') + idx;
  }
  std::vector<std::vector<EventSpec>> events(n_items);
  std::vector<std::string> failures(n_items);
  auto make = [&](std::size_t i) {
    try {
      SynthClip c = synth_clip(profile, labels[i] == 1, opt.clip_len_s, derive_seed(seed, "clip", i), ids[i],
                               opt.sample_rate);
      write_wav(c.clip, out_dir / "audio" / (ids[i] + ".wav"));
      events[i] = std::move(c.events);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  };
  const int threads = std::max(1, opt.threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < n_items; ++i) make(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < n_items; i += static_cast<std::size_t>(threads)) make(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw Error(ErrorCode::kIo, f);
  }

  GeneratedDataset out;
  out.event_log = nlohmann::json::object();
  for (std::size_t i = 0; i < n_items; ++i) {
    out.manifest.add({ids[i], labels[i] ? Label::kPositive : Label::kNegative, profile.name, "audio/" + ids[i] + ".wav"});
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : events[i]) list.push_back(event_json(e));
    out.event_log[ids[i]] = std::move(list);
  }
  write_manifest(out.manifest, out_dir / "manifest.csv");
  std::ofstream log(out_dir / "events.json", std::ios::binary);
  if (!log) throw Error(ErrorCode::kIo, "cannot write event log");
  log << out.event_log.dump(1) << '\n';
  return out;
}

}  // namespace avibench
