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

// Trainable clip scorers behind one model type, the versioned model file, data
// augmentation and pseudo-label self-adaptation.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avibench/audio.hpp"
#include "avibench/binary_io.hpp"
#include "avibench/common.hpp"
#include "avibench/dictionary.hpp"
#include "avibench/features.hpp"
#include "avibench/forest.hpp"
#include "avibench/gmm.hpp"
#include "avibench/rng.hpp"

namespace avibench {

enum class DetectorKind : std::uint32_t { kGmmPair = 1, kRandomForest = 2 };

inline std::string detector_kind_name(DetectorKind k) {
  return k == DetectorKind::kGmmPair ? "gmm" : "forest";
}

inline DetectorKind parse_detector_kind(const std::string& s) {
  if (s == "gmm" || s == "gmm-pair" || s == "smacpy") return DetectorKind::kGmmPair;
  if (s == "forest" || s == "random-forest" || s == "skfl") return DetectorKind::kRandomForest;
  throw Error(ErrorCode::kInvalidArgument, "unknown detector '" + s + "' (expected gmm or forest)");
}

struct DetectorConfig {
  DetectorKind kind = DetectorKind::kGmmPair;
  FrontEndConfig frontend = FrontEndConfig::for_mfcc();
  GmmFitOptions gmm;
  double temperature = 1.0;
  std::size_t max_frames_per_class = 40000;
  DictionaryConfig dictionary;
  ForestOptions forest;

  static DetectorConfig gmm_default() { return {}; }
  static DetectorConfig forest_default() {
    DetectorConfig c;
    c.kind = DetectorKind::kRandomForest;
    c.frontend = FrontEndConfig::for_dictionary();
    return c;
  }
  static DetectorConfig defaults_for(DetectorKind k) {
    return k == DetectorKind::kGmmPair ? gmm_default() : forest_default();
  }

  void validate() const {
    if (kind == DetectorKind::kGmmPair && frontend.kind != FeatureKind::kMfcc) {
      throw Error(ErrorCode::kInvalidArgument, "gmm detector expects an mfcc front end");
    }
    if (kind == DetectorKind::kRandomForest && frontend.kind != FeatureKind::kLogMel) {
      throw Error(ErrorCode::kInvalidArgument, "forest detector expects a log-mel front end");
    }
    if (!(temperature > 0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  }
};

struct ForestDetector {
  FeatureDictionary dictionary;
  RandomForest forest;
};

/// A fitted scorer. Scores are finite and in [0, 1].
struct DetectorModel {
  DetectorConfig config;
  std::uint64_t seed = 0;
  std::optional<GmmPair> gmm;
  std::optional<ForestDetector> forest;

  DetectorKind kind() const { return config.kind; }
  std::uint64_t feature_hash() const { return config.frontend.hash(); }

  double score(const FeatureFrames& f) const {
    if (f.kind != config.frontend.kind) {
      throw Error(ErrorCode::kConfigMismatch, "feature kind does not match the model front end");
    }
    double s;
    if (config.kind == DetectorKind::kGmmPair) {
      s = gmm_score(*gmm, f.vectors);
    } else {
      s = forest->forest.score(encode_pool(f, forest->dictionary));
    }
    return std::isfinite(s) ? std::clamp(s, 0.0, 1.0) : 0.5;
  }

  /// Scores a cached feature file, refusing features from another front end.
  double score(const CachedFeatures& f) const {
    if (f.config_hash != feature_hash()) {
      throw Error(ErrorCode::kConfigMismatch, "feature config hash does not match the model");
    }
    return score(f.frames);
  }
};

namespace detail {

inline Matrix pool_frames(const std::vector<const Matrix*>& parts, std::size_t cap, std::uint64_t seed) {
  if (parts.empty()) return Matrix();
  std::vector<Matrix> copies;
  copies.reserve(parts.size());
  for (const Matrix* p : parts) copies.push_back(*p);
  return subsample_rows(concat_rows(copies, parts.front()->cols()), cap == 0 ? SIZE_MAX : cap, seed);
}

}  // namespace detail

/// Fits the configured detector on per-clip front-end features.
inline DetectorModel train_detector(const DetectorConfig& cfg, const std::vector<FeatureFrames>& features,
                                    const std::vector<int>& labels, std::uint64_t seed) {
  cfg.validate();
  if (features.size() != labels.size()) throw Error(ErrorCode::kInvalidArgument, "label count mismatch");
  if (features.empty()) throw Error(ErrorCode::kInsufficientData, "empty training set");
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos == 0 || static_cast<std::size_t>(n_pos) == labels.size()) {
    throw Error(ErrorCode::kInsufficientData, "training set needs both classes");
  }
  for (const auto& f : features) {
    if (f.kind != cfg.frontend.kind) throw Error(ErrorCode::kConfigMismatch, "feature kind mismatch");
  }
  DetectorModel model{cfg, seed, std::nullopt, std::nullopt};
  if (cfg.kind == DetectorKind::kGmmPair) {
    std::vector<const Matrix*> pos, neg;
    for (std::size_t i = 0; i < features.size(); ++i) {
      (labels[i] == 1 ? pos : neg).push_back(&features[i].vectors);
    }
    const Matrix pf = detail::pool_frames(pos, cfg.max_frames_per_class, derive_seed(seed, "frames-positive"));
    const Matrix nf = detail::pool_frames(neg, cfg.max_frames_per_class, derive_seed(seed, "frames-negative"));
    model.gmm = gmm_fit(pf, nf, cfg.gmm, derive_seed(seed, "gmm"), cfg.temperature).model;
  } else {
    ForestDetector fd;
    fd.dictionary = learn_dictionary(features, cfg.dictionary, derive_seed(seed, "dictionary"));
    Matrix x(static_cast<Eigen::Index>(features.size()), fd.dictionary.summary_dim());
    for (std::size_t i = 0; i < features.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = encode_pool(features[i], fd.dictionary).transpose();
    }
    fd.forest = rf_fit(x, labels, cfg.forest, derive_seed(seed, "forest"));
    model.forest = std::move(fd);
  }
  return model;
}

// Model file layout (little-endian):
//   char[4] "AVBM", u32 version, u32 variant tag, u64 feature-config hash,
//   then the config, training seed and variant payload.
inline constexpr std::uint32_t kModelFileVersion = 1;

inline std::string encode_model(const DetectorModel& m) {
  BinaryWriter w;
  w.bytes("AVBM");
  w.u32(kModelFileVersion);
  w.u32(static_cast<std::uint32_t>(m.config.kind));
  w.u64(m.feature_hash());
  const auto& c = m.config;
  w.u32(static_cast<std::uint32_t>(c.frontend.kind));
  w.i32(c.frontend.frame_len);
  w.i32(c.frontend.hop);
  w.i32(c.frontend.n_mels);
  w.f64(c.frontend.fmin_hz);
  w.f64(c.frontend.fmax_hz);
  w.i32(c.frontend.n_mfcc);
  w.f64(c.frontend.log_floor);
  w.i32(c.gmm.n_components);
  w.i32(c.gmm.max_iter);
  w.f64(c.gmm.tol);
  w.f64(c.gmm.var_floor);
  w.f64(c.temperature);
  w.u64(c.max_frames_per_class);
  w.i32(c.forest.n_trees);
  w.i32(c.forest.max_depth);
  w.i32(c.forest.mtry);
  w.u64(m.seed);
  if (c.kind == DetectorKind::kGmmPair) {
    m.gmm->positive.save(w);
    m.gmm->negative.save(w);
    w.f64(m.gmm->temperature);
    w.f64(m.gmm->var_floor);
  } else {
    m.forest->dictionary.save(w);
    m.forest->forest.save(w);
  }
  return w.data();
}

inline DetectorModel decode_model(std::span<const unsigned char> bytes) {
  BinaryReader r(bytes);
  if (r.fixed(4) != "AVBM") throw Error(ErrorCode::kFormat, "not a model file");
  if (r.u32() != kModelFileVersion) throw Error(ErrorCode::kUnsupported, "unsupported model file version");
  DetectorModel m;
  auto& c = m.config;
  const std::uint32_t tag = r.u32();
  if (tag != 1 && tag != 2) throw Error(ErrorCode::kFormat, "unknown model variant");
  c.kind = static_cast<DetectorKind>(tag);
  const std::uint64_t stored_hash = r.u64();
  c.frontend.kind = static_cast<FeatureKind>(r.u32());
  c.frontend.frame_len = r.i32();
  c.frontend.hop = r.i32();
  c.frontend.n_mels = r.i32();
  c.frontend.fmin_hz = r.f64();
  c.frontend.fmax_hz = r.f64();
  c.frontend.n_mfcc = r.i32();
  c.frontend.log_floor = r.f64();
  c.gmm.n_components = r.i32();
  c.gmm.max_iter = r.i32();
  c.gmm.tol = r.f64();
  c.gmm.var_floor = r.f64();
  c.temperature = r.f64();
  c.max_frames_per_class = r.u64();
  c.forest.n_trees = r.i32();
  c.forest.max_depth = r.i32();
  c.forest.mtry = r.i32();
  m.seed = r.u64();
  if (stored_hash != c.frontend.hash()) throw Error(ErrorCode::kFormat, "model header hash is inconsistent");
  if (c.kind == DetectorKind::kGmmPair) {
    GmmPair g;
    g.positive = DiagGmm::load(r);
    g.negative = DiagGmm::load(r);
    g.temperature = r.f64();
    g.var_floor = r.f64();
    m.gmm = std::move(g);
  } else {
    ForestDetector fd;
    fd.dictionary = FeatureDictionary::load(r);
    fd.forest = RandomForest::load(r);
    c.dictionary = fd.dictionary.config;
    m.forest = std::move(fd);
  }
  if (!r.at_end()) throw Error(ErrorCode::kFormat, "trailing bytes in model file");
  return m;
}

inline void save_model(const DetectorModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::string bytes = encode_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline DetectorModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_model(bytes);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  int factor = 2;  // output size = input size * factor, originals included
  bool time_shift = true;
  bool noise_mix = true;
  double snr_min_db = 10.0;
  double snr_max_db = 30.0;
};

/// Circular shift right by `offset` samples.
inline AudioClip time_shift(const AudioClip& clip, std::size_t offset) {
  AudioClip out = clip;
  if (clip.samples.empty()) return out;
  offset %= clip.samples.size();
  std::rotate(out.samples.rbegin(), out.samples.rbegin() + static_cast<std::ptrdiff_t>(offset),
              out.samples.rend());
  return out;
}

/// Adds white Gaussian noise whose RMS sits snr_db below the clip RMS.
/// Silent clips are returned unchanged.
inline AudioClip noise_mix(const AudioClip& clip, double snr_db, Rng& rng) {
  AudioClip out = clip;
  const double signal_rms = rms(clip.samples);
  if (signal_rms == 0.0) return out;
  std::vector<double> noise(clip.samples.size());
  for (double& v : noise) v = rng.normal();
  const double scale = signal_rms * std::pow(10.0, -snr_db / 20.0) / rms(noise);
  for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] += scale * noise[i];
  return out;
}

struct LabeledClips {
  std::vector<AudioClip> clips;
  std::vector<int> labels;
};

inline LabeledClips augment(const std::vector<AudioClip>& clips, const std::vector<int>& labels,
                            const AugmentConfig& cfg, std::uint64_t seed) {
  if (cfg.factor < 1) throw Error(ErrorCode::kInvalidArgument, "augmentation factor must be >= 1");
  if (clips.size() != labels.size()) throw Error(ErrorCode::kInvalidArgument, "label count mismatch");
  if (cfg.factor > 1 && !cfg.time_shift && !cfg.noise_mix) {
    throw Error(ErrorCode::kInvalidArgument, "no augmentation operation enabled");
  }
  if (cfg.noise_mix && cfg.snr_min_db > cfg.snr_max_db) {
    throw Error(ErrorCode::kInvalidArgument, "noise-mix SNR range is inverted");
  }
  LabeledClips out{clips, labels};
  for (std::size_t i = 0; i < clips.size(); ++i) {
    for (int j = 1; j < cfg.factor; ++j) {
      Rng rng(derive_seed(seed, "augment", i * static_cast<std::size_t>(cfg.factor) + static_cast<std::size_t>(j)));
      AudioClip c = clips[i];
      if (cfg.time_shift && !c.samples.empty()) c = time_shift(c, rng.index(c.samples.size()));
      if (cfg.noise_mix) c = noise_mix(c, rng.uniform(cfg.snr_min_db, cfg.snr_max_db), rng);
      c.id = clips[i].id + "_aug" + std::to_string(j);
      out.clips.push_back(std::move(c));
      out.labels.push_back(labels[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Self-adaptation

struct AdaptationConfig {
  double low_threshold = 0.1;
  double high_threshold = 0.9;
  std::size_t max_added = 500;  // per class per round
  int rounds = 1;

  void validate() const {
    if (!(low_threshold >= 0.0 && high_threshold <= 1.0 && low_threshold < high_threshold)) {
      throw Error(ErrorCode::kInvalidArgument, "adaptation thresholds must satisfy 0 <= low < high <= 1");
    }
    if (rounds < 1) throw Error(ErrorCode::kInvalidArgument, "adaptation needs at least one round");
  }
};

struct PseudoLabel {
  std::string item_id;
  int label;
  double score;
};

struct AdaptationRound {
  std::size_t added_positive = 0;
  std::size_t added_negative = 0;
};

struct AdaptationResult {
  DetectorModel model;
  std::vector<AdaptationRound> rounds;
  std::vector<PseudoLabel> last_selection;
};

/// Picks the most confident pool items: score >= high as positives, score <= low
/// as negatives, at most max_added each. Ties are broken by item id.
inline std::vector<PseudoLabel> select_pseudo_labels(const std::vector<std::string>& ids,
                                                     const std::vector<double>& scores,
                                                     const AdaptationConfig& cfg) {
  std::vector<PseudoLabel> pos, neg;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (scores[i] >= cfg.high_threshold) pos.push_back({ids[i], 1, scores[i]});
    else if (scores[i] <= cfg.low_threshold) neg.push_back({ids[i], 0, scores[i]});
  }
  std::sort(pos.begin(), pos.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return a.score != b.score ? a.score > b.score : a.item_id < b.item_id;
  });
  std::sort(neg.begin(), neg.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return a.score != b.score ? a.score < b.score : a.item_id < b.item_id;
  });
  if (pos.size() > cfg.max_added) pos.resize(cfg.max_added);
  if (neg.size() > cfg.max_added) neg.resize(cfg.max_added);
  pos.insert(pos.end(), neg.begin(), neg.end());
  return pos;
}

/// Two-stage training: score the unlabeled target pool, keep the confident
/// predictions as pseudo-labels and retrain on original + pseudo-labeled data.
/// Each round re-scores the pool with the latest model.
inline AdaptationResult self_adapt(const DetectorModel& model, const std::vector<FeatureFrames>& train_features,
                                   const std::vector<int>& train_labels, const std::vector<std::string>& pool_ids,
                                   const std::vector<FeatureFrames>& pool_features, const AdaptationConfig& cfg) {
  cfg.validate();
  if (pool_ids.size() != pool_features.size()) throw Error(ErrorCode::kInvalidArgument, "pool id count mismatch");
  AdaptationResult result{model, {}, {}};
  if (pool_features.empty()) return result;
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < pool_ids.size(); ++i) {
    if (!position.emplace(pool_ids[i], i).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate pool id " + pool_ids[i]);
    }
  }
  for (int round = 0; round < cfg.rounds; ++round) {
    std::vector<double> scores(pool_features.size());
    for (std::size_t i = 0; i < pool_features.size(); ++i) scores[i] = result.model.score(pool_features[i]);
    auto selection = select_pseudo_labels(pool_ids, scores, cfg);
    if (selection.empty()) break;
    std::vector<FeatureFrames> feats = train_features;
    std::vector<int> labels = train_labels;
    AdaptationRound info;
    for (const auto& p : selection) {
      feats.push_back(pool_features[position.at(p.item_id)]);
      labels.push_back(p.label);
      (p.label == 1 ? info.added_positive : info.added_negative)++;
    }
    result.model = train_detector(model.config, feats, labels, derive_seed(model.seed, "adapt", static_cast<std::uint64_t>(round)));
    result.rounds.push_back(info);
    result.last_selection = std::move(selection);
  }
  return result;
}

}  // namespace avibench
