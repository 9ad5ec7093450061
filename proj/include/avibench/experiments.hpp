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

// Dataset-level plumbing shared by the CLI and the benchmark suites:
// featurizing manifests, batch prediction, train/test AUC grids and the
// matched/mismatched self-adaptation benchmark.

#pragma once

#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "avibench/audio.hpp"
#include "avibench/detector.hpp"
#include "avibench/features.hpp"
#include "avibench/manifest.hpp"
#include "avibench/metrics.hpp"
#include "avibench/synth.hpp"

namespace avibench {

/// Per-item front-end features with labels (-1 when unknown).
struct FeatureDataset {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> sites;
  std::vector<FeatureFrames> features;
  std::uint64_t config_hash = 0;

  std::size_t size() const { return ids.size(); }

  DatasetManifest truth() const {
    DatasetManifest m;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      m.add({ids[i], labels[i] == 1 ? Label::kPositive : labels[i] == 0 ? Label::kNegative : Label::kUnknown,
             sites[i].empty() ? std::nullopt : std::optional<std::string>(sites[i]), ids[i] + ".wav"});
    }
    return m;
  }
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(threads)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline int label_int(Label l) { return l == Label::kPositive ? 1 : l == Label::kNegative ? 0 : -1; }

}  // namespace detail

inline FeatureDataset featurize_manifest(const DatasetManifest& manifest, const std::filesystem::path& root,
                                         const FrontEndConfig& frontend, int threads = 1,
                                         const WavReadOptions& wav = {}) {
  FeatureDataset ds;
  ds.config_hash = frontend.hash();
  ds.features.resize(manifest.size());
  for (const auto& item : manifest.items()) {
    ds.ids.push_back(item.item_id);
    ds.labels.push_back(detail::label_int(item.label));
    ds.sites.push_back(item.site.value_or(""));
  }
  detail::parallel_for(manifest.size(), threads, [&](std::size_t i) {
    const auto& item = manifest.items()[i];
    AudioClip clip = read_wav(root / item.path, wav);
    clip.id = item.item_id;
    ds.features[i] = extract_features(clip, frontend);
  });
  return ds;
}

/// In-memory equivalent of generate_dataset + featurize_manifest: the clips are
/// quantized to 16-bit exactly as a WAV round trip would.
inline FeatureDataset synth_feature_dataset(const SiteProfile& profile, std::size_t n_items, std::uint64_t seed,
                                            double clip_len_s, const FrontEndConfig& frontend,
                                            const std::string& id_prefix = "", int threads = 1) {
  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n_items) * profile.positive_rate));
  std::vector<int> labels(n_items, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
  Rng label_rng(derive_seed(seed, "labels"));
  label_rng.shuffle(labels);
  const std::string prefix = id_prefix.empty() ? profile.name : id_prefix;
  FeatureDataset ds;
  ds.config_hash = frontend.hash();
  ds.labels = labels;
  ds.features.resize(n_items);
  const std::size_t width = std::max<std::size_t>(5, std::to_string(n_items).size());
  for (std::size_t i = 0; i < n_items; ++i) {
    std::string idx = std::to_string(i);
    ds.ids.push_back(prefix + "_" + std::string(width - idx.size(), '0') + idx);
    ds.sites.push_back(profile.name);
  }
  detail::parallel_for(n_items, threads, [&](std::size_t i) {
    SynthClip c = synth_clip(profile, labels[i] == 1, clip_len_s, derive_seed(seed, "clip", i), ds.ids[i]);
    for (double& s : c.clip.samples) s = detail::quantize_pcm16(s) / 32768.0;
    ds.features[i] = extract_features(c.clip, frontend);
  });
  return ds;
}

/// Labelled subset of a dataset as training inputs.
inline std::pair<std::vector<FeatureFrames>, std::vector<int>> labelled_subset(const FeatureDataset& ds) {
  std::pair<std::vector<FeatureFrames>, std::vector<int>> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0) continue;
    out.first.push_back(ds.features[i]);
    out.second.push_back(ds.labels[i]);
  }
  return out;
}

inline DetectorModel train_on(const FeatureDataset& ds, const DetectorConfig& cfg, std::uint64_t seed) {
  if (ds.config_hash != cfg.frontend.hash()) {
    throw Error(ErrorCode::kConfigMismatch, "dataset features were computed with another front end");
  }
  auto [features, labels] = labelled_subset(ds);
  if (features.empty()) throw Error(ErrorCode::kInsufficientData, "training manifest has no labelled items");
  return train_detector(cfg, features, labels, seed);
}

inline SubmissionSet predict(const DetectorModel& model, const FeatureDataset& ds, int threads = 1) {
  if (ds.config_hash != model.feature_hash()) {
    throw Error(ErrorCode::kConfigMismatch, "feature config hash does not match the model");
  }
  std::vector<double> scores(ds.size());
  detail::parallel_for(ds.size(), threads, [&](std::size_t i) { scores[i] = model.score(ds.features[i]); });
  SubmissionSet sub;
  for (std::size_t i = 0; i < ds.size(); ++i) sub.add(ds.ids[i], scores[i]);
  return sub;
}

/// AUC for every (train, test) pair; the diagonal is matched conditions.
inline Matrix crossgrid(const std::vector<FeatureDataset>& train, const std::vector<FeatureDataset>& test,
                        const DetectorConfig& cfg, std::uint64_t seed, int threads = 1) {
  if (train.empty() || test.empty()) throw Error(ErrorCode::kInvalidArgument, "crossgrid needs train and test sets");
  Matrix grid(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(test.size()));
  for (std::size_t r = 0; r < train.size(); ++r) {
    if (train[r].size() == 0) throw Error(ErrorCode::kInsufficientData, "empty training manifest");
    const DetectorModel model = train_on(train[r], cfg, derive_seed(seed, "crossgrid", r));
    for (std::size_t c = 0; c < test.size(); ++c) {
      const auto sub = predict(model, test[c], threads);
      grid(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = auc(sub, test[c].truth());
    }
  }
  return grid;
}

inline Matrix crossgrid(const std::vector<std::filesystem::path>& train_manifests,
                        const std::vector<std::filesystem::path>& test_manifests, const DetectorConfig& cfg,
                        std::uint64_t seed, int threads = 1) {
  auto load = [&](const std::vector<std::filesystem::path>& paths) {
    std::vector<FeatureDataset> out;
    for (const auto& p : paths) {
      const auto m = load_manifest(p);
      if (m.empty()) throw Error(ErrorCode::kInsufficientData, "empty manifest " + p.string());
      out.push_back(featurize_manifest(m, p.parent_path(), cfg.frontend, threads));
    }
    return out;
  };
  return crossgrid(load(train_manifests), load(test_manifests), cfg, seed, threads);
}

inline DetectorConfig shift_benchmark_detector() {
  DetectorConfig c = DetectorConfig::gmm_default();
  c.temperature = 0.2;
  return c;
}

struct ShiftBenchmarkConfig {
  std::size_t n_train = 200;
  std::size_t n_test = 200;
  double clip_len_s = 5.0;
  DetectorConfig detector = shift_benchmark_detector();
  AdaptationConfig adaptation;
  int threads = 1;
};

struct ShiftBenchmarkResult {
  double matched_before = 0;
  double matched_after = 0;
  double mismatched_before = 0;
  double mismatched_after = 0;
  AdaptationResult matched_adaptation;
  AdaptationResult mismatched_adaptation;
};

/// Train on the source profile; test on fresh source data (matched) and on the
/// target profile (mismatched), each before and after self-adaptation on the
/// unlabelled test pool.
inline ShiftBenchmarkResult run_shift_benchmark(const SiteProfile& source, const SiteProfile& target,
                                                const ShiftBenchmarkConfig& cfg, std::uint64_t seed) {
  const auto& fe = cfg.detector.frontend;
  const auto train = synth_feature_dataset(source, cfg.n_train, derive_seed(seed, "train"), cfg.clip_len_s, fe,
                                           source.name + "-train", cfg.threads);
  const auto matched = synth_feature_dataset(source, cfg.n_test, derive_seed(seed, "matched"), cfg.clip_len_s, fe,
                                             source.name + "-test", cfg.threads);
  const auto mismatched = synth_feature_dataset(target, cfg.n_test, derive_seed(seed, "mismatched"), cfg.clip_len_s,
                                                fe, target.name + "-test", cfg.threads);
  const DetectorModel model = train_on(train, cfg.detector, derive_seed(seed, "model"));
  auto [train_feats, train_labels] = labelled_subset(train);

  ShiftBenchmarkResult r;
  auto run = [&](const FeatureDataset& test, double& before, double& after, AdaptationResult& adapted) {
    before = auc(predict(model, test, cfg.threads), test.truth());
    adapted = self_adapt(model, train_feats, train_labels, test.ids, test.features, cfg.adaptation);
    after = auc(predict(adapted.model, test, cfg.threads), test.truth());
  };
  run(matched, r.matched_before, r.matched_after, r.matched_adaptation);
  run(mismatched, r.mismatched_before, r.mismatched_after, r.mismatched_adaptation);
  return r;
}

}  // namespace avibench
