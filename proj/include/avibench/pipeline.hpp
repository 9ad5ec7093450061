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


// Pipeline configuration and the stage functions behind each CLI subcommand.
// Stages return JSON results; timestamps never appear in them.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avibench/audio.hpp"
#include "avibench/detector.hpp"
#include "avibench/experiments.hpp"
#include "avibench/features.hpp"
#include "avibench/manifest.hpp"
#include "avibench/metrics.hpp"
#include "avibench/report.hpp"
#include "avibench/submission.hpp"
#include "avibench/synth.hpp"
#include "json.hpp"

namespace avibench {

enum class NormalizeMode { kPre, kPost, kNone };

inline std::string normalize_mode_name(NormalizeMode m) {
  return m == NormalizeMode::kPre ? "pre" : m == NormalizeMode::kPost ? "post" : "none";
}

inline NormalizeMode parse_normalize_mode(const std::string& s) {
  if (s == "pre") return NormalizeMode::kPre;
  if (s == "post") return NormalizeMode::kPost;
  if (s == "none") return NormalizeMode::kNone;
  throw Error(ErrorCode::kInvalidArgument, "normalize must be pre, post or none");
}

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "log-mel" || s == "logmel") return FeatureKind::kLogMel;
  if (s == "mfcc") return FeatureKind::kMfcc;
  throw Error(ErrorCode::kInvalidArgument, "front end kind must be log-mel or mfcc");
}

struct PipelineConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  double clip_len_s = 10.0;
  NormalizeMode normalize = NormalizeMode::kPre;
  double headroom_db = 2.0;
  DetectorConfig detector = DetectorConfig::gmm_default();
  AdaptationConfig adaptation;
  EvalOptions eval;
  std::filesystem::path data_dir;

  void validate() const {
    if (threads < 1) throw Error(ErrorCode::kInvalidArgument, "threads must be >= 1");
    if (!(clip_len_s > 0)) throw Error(ErrorCode::kInvalidArgument, "clip_len_s must be positive");
    if (!(headroom_db >= 0)) throw Error(ErrorCode::kInvalidArgument, "headroom_db must be >= 0");
    if (eval.n_boot < 1) throw Error(ErrorCode::kInvalidArgument, "n_boot must be >= 1");
    if (eval.n_bins < 1) throw Error(ErrorCode::kInvalidArgument, "n_bins must be >= 1");
    const auto& f = detector.frontend;
    if (f.frame_len < 16 || f.hop < 1 || f.n_mels < 1 || f.n_mfcc < 1 || f.n_mfcc > f.n_mels || !(f.log_floor > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "invalid front end parameters");
    }
    if (detector.gmm.n_components < 1 || detector.gmm.max_iter < 1 || !(detector.gmm.var_floor > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "invalid gmm parameters");
    }
    const auto& d = detector.dictionary;
    if (d.patch_width < 1 || d.k1 < 1 || d.k2 < 1 || d.pool_factor < 1 || d.layer2_width < 1 || d.max_iter < 1) {
      throw Error(ErrorCode::kInvalidArgument, "invalid dictionary parameters");
    }
    if (detector.forest.n_trees < 1 || detector.forest.max_depth < 1 || detector.forest.mtry < 0) {
      throw Error(ErrorCode::kInvalidArgument, "invalid forest parameters");
    }
    detector.validate();
    adaptation.validate();
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw Error(ErrorCode::kInvalidArgument, "unknown config key " + where + "." + k);
    }
  }
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline nlohmann::json frontend_json(const FrontEndConfig& f) {
  return {{"kind", feature_kind_name(f.kind)}, {"frame_len", f.frame_len}, {"hop", f.hop},
          {"n_mels", f.n_mels},               {"fmin_hz", f.fmin_hz},     {"fmax_hz", f.fmax_hz},
          {"n_mfcc", f.n_mfcc},               {"log_floor", f.log_floor}};
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& d = c.detector;
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"clip_len_s", c.clip_len_s},
          {"normalize", normalize_mode_name(c.normalize)},
          {"headroom_db", c.headroom_db},
          {"data_dir", c.data_dir.string()},
          {"detector",
           {{"kind", detector_kind_name(d.kind)},
            {"temperature", d.temperature},
            {"max_frames_per_class", d.max_frames_per_class},
            {"frontend", frontend_json(d.frontend)},
            {"gmm",
             {{"n_components", d.gmm.n_components},
              {"max_iter", d.gmm.max_iter},
              {"tol", d.gmm.tol},
              {"var_floor", d.gmm.var_floor}}},
            {"dictionary",
             {{"patch_width", d.dictionary.patch_width},
              {"k1", d.dictionary.k1},
              {"k2", d.dictionary.k2},
              {"pool_factor", d.dictionary.pool_factor},
              {"layer2_width", d.dictionary.layer2_width},
              {"max_iter", d.dictionary.max_iter},
              {"max_patches", d.dictionary.max_patches},
              {"whiten_eps", d.dictionary.whiten_eps},
              {"band_median_norm", d.dictionary.band_median_norm}}},
            {"forest", {{"n_trees", d.forest.n_trees}, {"max_depth", d.forest.max_depth}, {"mtry", d.forest.mtry}}}}},
          {"adaptation",
           {{"low_threshold", c.adaptation.low_threshold},
            {"high_threshold", c.adaptation.high_threshold},
            {"max_added", c.adaptation.max_added},
            {"rounds", c.adaptation.rounds}}},
          {"eval", {{"n_boot", c.eval.n_boot}, {"n_bins", c.eval.n_bins}}}};
}

/// Overlays `j` on `c`. Unknown keys are rejected. Setting detector.kind resets
/// the detector section to that kind's defaults first.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using detail::check_keys;
  using detail::take;
  try {
    check_keys(j, {"seed", "threads", "clip_len_s", "normalize", "headroom_db", "data_dir", "detector", "adaptation",
                   "eval"},
               "config");
    take(j, "seed", c.seed);
    take(j, "threads", c.threads);
    take(j, "clip_len_s", c.clip_len_s);
    take(j, "headroom_db", c.headroom_db);
    if (j.contains("normalize")) c.normalize = parse_normalize_mode(j.at("normalize").get<std::string>());
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      check_keys(d, {"kind", "temperature", "max_frames_per_class", "frontend", "gmm", "dictionary", "forest"},
                 "detector");
      if (d.contains("kind")) {
        c.detector = DetectorConfig::defaults_for(parse_detector_kind(d.at("kind").get<std::string>()));
      }
      take(d, "temperature", c.detector.temperature);
      take(d, "max_frames_per_class", c.detector.max_frames_per_class);
      if (d.contains("frontend")) {
        const auto& f = d.at("frontend");
        auto& fe = c.detector.frontend;
        check_keys(f, {"kind", "frame_len", "hop", "n_mels", "fmin_hz", "fmax_hz", "n_mfcc", "log_floor"},
                   "detector.frontend");
        if (f.contains("kind")) fe.kind = parse_feature_kind(f.at("kind").get<std::string>());
        take(f, "frame_len", fe.frame_len);
        take(f, "hop", fe.hop);
        take(f, "n_mels", fe.n_mels);
        take(f, "fmin_hz", fe.fmin_hz);
        take(f, "fmax_hz", fe.fmax_hz);
        take(f, "n_mfcc", fe.n_mfcc);
        take(f, "log_floor", fe.log_floor);
      }
      if (d.contains("gmm")) {
        const auto& g = d.at("gmm");
        check_keys(g, {"n_components", "max_iter", "tol", "var_floor"}, "detector.gmm");
        take(g, "n_components", c.detector.gmm.n_components);
        take(g, "max_iter", c.detector.gmm.max_iter);
        take(g, "tol", c.detector.gmm.tol);
        take(g, "var_floor", c.detector.gmm.var_floor);
      }
      if (d.contains("dictionary")) {
        const auto& k = d.at("dictionary");
        auto& dc = c.detector.dictionary;
        check_keys(k, {"patch_width", "k1", "k2", "pool_factor", "layer2_width", "max_iter", "max_patches",
                       "whiten_eps", "band_median_norm"},
                   "detector.dictionary");
        take(k, "patch_width", dc.patch_width);
        take(k, "k1", dc.k1);
        take(k, "k2", dc.k2);
        take(k, "pool_factor", dc.pool_factor);
        take(k, "layer2_width", dc.layer2_width);
        take(k, "max_iter", dc.max_iter);
        take(k, "max_patches", dc.max_patches);
        take(k, "whiten_eps", dc.whiten_eps);
        take(k, "band_median_norm", dc.band_median_norm);
      }
      if (d.contains("forest")) {
        const auto& f = d.at("forest");
        check_keys(f, {"n_trees", "max_depth", "mtry"}, "detector.forest");
        take(f, "n_trees", c.detector.forest.n_trees);
        take(f, "max_depth", c.detector.forest.max_depth);
        take(f, "mtry", c.detector.forest.mtry);
      }
    }
    if (j.contains("adaptation")) {
      const auto& a = j.at("adaptation");
      check_keys(a, {"low_threshold", "high_threshold", "max_added", "rounds"}, "adaptation");
      take(a, "low_threshold", c.adaptation.low_threshold);
      take(a, "high_threshold", c.adaptation.high_threshold);
      take(a, "max_added", c.adaptation.max_added);
      take(a, "rounds", c.adaptation.rounds);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"n_boot", "n_bins"}, "eval");
      take(e, "n_boot", c.eval.n_boot);
      take(e, "n_bins", c.eval.n_bins);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// synth / segment

inline SiteProfile profile_from_json(const nlohmann::json& j) {
  SiteProfile p = j.contains("base") ? builtin_profile(j.at("base").get<std::string>()) : SiteProfile{};
  try {
    detail::take(j, "name", p.name);
    if (j.contains("noise_color")) {
      const auto c = j.at("noise_color").get<std::string>();
      if (c != "white" && c != "pink") throw Error(ErrorCode::kInvalidArgument, "noise_color must be white or pink");
      p.noise_color = c == "white" ? NoiseColor::kWhite : NoiseColor::kPink;
    }
    detail::take(j, "noise_level_dbfs", p.noise_level_dbfs);
    detail::take(j, "gust_depth", p.gust_depth);
    if (j.contains("event_weights")) {
      const auto& w = j.at("event_weights");
      for (std::size_t k = 0; k < kAllEventKinds.size(); ++k) {
        const auto name = event_kind_name(kAllEventKinds[k]);
        if (w.contains(name)) p.event_weights[k] = w.at(name).get<double>();
      }
    }
    detail::take(j, "positive_rate", p.positive_rate);
    detail::take(j, "snr_min_db", p.snr_min_db);
    detail::take(j, "snr_max_db", p.snr_max_db);
    detail::take(j, "distractor_snr_min_db", p.distractor_snr_min_db);
    detail::take(j, "distractor_snr_max_db", p.distractor_snr_max_db);
    detail::take(j, "distractors_per_clip", p.distractors_per_clip);
    detail::take(j, "extra_bird_events", p.extra_bird_events);
    detail::take(j, "chirp_low_hz", p.chirp_low_hz);
    detail::take(j, "chirp_high_hz", p.chirp_high_hz);
    detail::take(j, "reverb_tail_s", p.reverb_tail_s);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("profile: ") + e.what());
  }
  p.validate();
  return p;
}

/// A built-in profile name or a JSON profile file.
inline SiteProfile resolve_profile(const std::string& spec) {
  if (spec == "siteA" || spec == "siteB") return builtin_profile(spec);
  if (std::filesystem::is_regular_file(spec)) return profile_from_json(read_json_file(spec));
  throw Error(ErrorCode::kInvalidArgument, "unknown profile '" + spec + "' (siteA, siteB or a JSON file)");
}

inline nlohmann::json synth_stage(const SiteProfile& profile, std::size_t n, std::uint64_t seed,
                                  const std::filesystem::path& out_dir, const PipelineConfig& cfg,
                                  const std::string& id_prefix = "") {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "n must be positive");
  GenerateOptions opt;
  opt.clip_len_s = cfg.clip_len_s;
  opt.threads = cfg.threads;
  opt.id_prefix = id_prefix;
  const auto g = generate_dataset(profile, n, seed, out_dir, opt);
  return {{"manifest", (out_dir / "manifest.csv").string()},
          {"n_items", g.manifest.size()},
          {"n_positive", g.manifest.count(Label::kPositive)},
          {"profile", profile_json(profile)},
          {"seed", seed}};
}

/// Segments every recording of a manifest into fixed-length clips. Clip labels
/// are unknown; the site tag is inherited.
inline nlohmann::json segment_stage(const DatasetManifest& recordings, const std::filesystem::path& root,
                                    const std::filesystem::path& out_dir, const PipelineConfig& cfg) {
  std::filesystem::create_directories(out_dir / "audio");
  DatasetManifest out;
  std::size_t silent = 0, dropped = 0;
  for (const auto& item : recordings.items()) {
    AudioClip rec = read_wav(root / item.path);
    rec.id = item.item_id;
    if (cfg.normalize == NormalizeMode::kPre) {
      auto n = normalize_peak(rec, cfg.headroom_db);
      silent += n.silent ? 1 : 0;
      rec = std::move(n.clip);
    }
    auto clips = segment(rec, cfg.clip_len_s);
    if (clips.empty()) ++dropped;
    for (auto& c : clips) {
      if (cfg.normalize == NormalizeMode::kPost) {
        auto n = normalize_peak(c, cfg.headroom_db);
        silent += n.silent ? 1 : 0;
        c = std::move(n.clip);
      }
      const std::string rel = "audio/" + c.id + ".wav";
      write_wav(c, out_dir / rel);
      out.add({c.id, Label::kUnknown, item.site, rel});
    }
  }
  write_manifest(out, out_dir / "manifest.csv");
  return {{"manifest", (out_dir / "manifest.csv").string()},
          {"n_recordings", recordings.size()},
          {"n_clips", out.size()},
          {"dropped_recordings", dropped},
          {"silent", silent}};
}

// ---------------------------------------------------------------------------
// Feature directories: <id>.feat per item plus features.json.

inline void check_file_safe_id(const std::string& id) {
  if (id.empty() || id == "." || id == ".." || id.find('/') != std::string::npos ||
      id.find('\\') != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "item id not usable as a file name: " + id);
  }
}

inline void write_feature_dir(const FeatureDataset& ds, const FrontEndConfig& fe, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    check_file_safe_id(ds.ids[i]);
    write_feature_cache(ds.features[i], ds.config_hash, dir / (ds.ids[i] + ".feat"));
    items.push_back({{"itemid", ds.ids[i]},
                     {"label", ds.labels[i]},
                     {"site", ds.sites[i]},
                     {"rows", ds.features[i].vectors.rows()},
                     {"file", ds.ids[i] + ".feat"}});
  }
  const nlohmann::json index = {
      {"frontend", frontend_json(fe)}, {"config_hash", detail::hex64(ds.config_hash)}, {"items", std::move(items)}};
  write_text_file(dir / "features.json", index.dump(1) + "\n");
}

inline FeatureDataset load_feature_dir(const std::filesystem::path& dir) {
  const auto index = read_json_file(dir / "features.json");
  FeatureDataset ds;
  try {
    ds.config_hash = std::stoull(index.at("config_hash").get<std::string>(), nullptr, 16);
    for (const auto& it : index.at("items")) {
      const auto id = it.at("itemid").get<std::string>();
      check_file_safe_id(id);
      auto cached = read_feature_cache(dir / it.at("file").get<std::string>());
      if (cached.config_hash != ds.config_hash) {
        throw Error(ErrorCode::kConfigMismatch, "feature file " + id + " has a different config hash");
      }
      ds.ids.push_back(id);
      ds.labels.push_back(it.at("label").get<int>());
      ds.sites.push_back(it.at("site").get<std::string>());
      ds.features.push_back(std::move(cached.frames));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, (dir / "features.json").string() + ": " + e.what());
  }
  return ds;
}

inline nlohmann::json featurize_stage(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                                      const PipelineConfig& cfg) {
  const auto m = load_manifest(manifest_path);
  const auto ds = featurize_manifest(m, manifest_path.parent_path(), cfg.detector.frontend, cfg.threads);
  write_feature_dir(ds, cfg.detector.frontend, out_dir);
  return {{"features", out_dir.string()}, {"n_items", ds.size()}, {"config_hash", detail::hex64(ds.config_hash)}};
}

// ---------------------------------------------------------------------------
// train / predict / adapt

inline nlohmann::json train_stage(const std::filesystem::path& features_dir, const std::filesystem::path& model_out,
                                  const PipelineConfig& cfg) {
  const auto ds = load_feature_dir(features_dir);
  const auto model = train_on(ds, cfg.detector, derive_seed(cfg.seed, "train"));
  save_model(model, model_out);
  const auto [f, labels] = labelled_subset(ds);
  return {{"model", model_out.string()},
          {"detector", detector_kind_name(model.kind())},
          {"n_train", labels.size()},
          {"n_positive", std::count(labels.begin(), labels.end(), 1)}};
}

inline nlohmann::json predict_stage(const std::filesystem::path& model_path, const std::filesystem::path& features_dir,
                                    const std::filesystem::path& sub_out, const PipelineConfig& cfg) {
  const auto model = load_model(model_path);
  const auto ds = load_feature_dir(features_dir);
  const auto sub = predict(model, ds, cfg.threads);
  write_submission(sub, sub_out);
  return {{"submission", sub_out.string()}, {"n_items", sub.size()}};
}

inline nlohmann::json adapt_stage(const std::filesystem::path& model_path, const std::filesystem::path& train_dir,
                                  const std::filesystem::path& pool_dir, const std::filesystem::path& model_out,
                                  const PipelineConfig& cfg) {
  const auto model = load_model(model_path);
  const auto train = load_feature_dir(train_dir);
  const auto pool = load_feature_dir(pool_dir);
  if (train.config_hash != model.feature_hash() || pool.config_hash != model.feature_hash()) {
    throw Error(ErrorCode::kConfigMismatch, "feature config hash does not match the model");
  }
  const auto [tf, tl] = labelled_subset(train);
  const auto r = self_adapt(model, tf, tl, pool.ids, pool.features, cfg.adaptation);
  save_model(r.model, model_out);
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& rd : r.rounds) {
    rounds.push_back({{"added_positive", rd.added_positive}, {"added_negative", rd.added_negative}});
  }
  return {{"model", model_out.string()}, {"rounds", std::move(rounds)}};
}

// ---------------------------------------------------------------------------
// evaluation and analyses

inline nlohmann::json evaluate_stage(const std::vector<std::filesystem::path>& subs,
                                     const std::filesystem::path& truth_path, const PipelineConfig& cfg,
                                     const std::filesystem::path& figures_dir = {}) {
  if (subs.empty()) throw Error(ErrorCode::kInvalidArgument, "no submission given");
  const auto truth = load_manifest(truth_path);
  EvalOptions eo = cfg.eval;
  eo.seed = derive_seed(cfg.seed, "evaluate");
  std::vector<SubmissionSet> sets;
  for (const auto& p : subs) sets.push_back(load_submission(p));
  if (sets.size() == 1) {
    const auto r = evaluate(sets[0], truth, eo);
    if (!figures_dir.empty()) write_report_figures(r, figures_dir);
    return to_json(r);
  }
  nlohmann::json reports = nlohmann::json::array();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto r = evaluate(sets[i], truth, eo);
    if (!figures_dir.empty()) write_report_figures(r, figures_dir / subs[i].stem());
    reports.push_back({{"submission", subs[i].string()}, {"report", to_json(r)}});
  }
  nlohmann::json out = {{"reports", std::move(reports)}};
  out["ensemble_auc"] = auc(ensemble_mean(sets), truth);
  out["pooled_vs_mean_r2"] = detail::number_or_null(pooled_vs_mean_r2(sets, truth));
  if (sets.size() >= 3) {
    const Matrix pcs = rank_pca(sets, 2);
    nlohmann::json coords = nlohmann::json::array();
    for (Eigen::Index i = 0; i < pcs.rows(); ++i) coords.push_back({pcs(i, 0), pcs(i, 1)});
    out["rank_pca"] = std::move(coords);
  }
  return out;
}

inline std::string grid_csv(const nlohmann::json& grid) {
  std::ostringstream s;
  s.precision(17);
  s << "train\\test";
  for (const auto& c : grid.at("test")) s << ',' << c.get<std::string>();
  s << '\n';
  for (std::size_t r = 0; r < grid.at("train").size(); ++r) {
    s << grid.at("train")[r].get<std::string>();
    for (const auto& v : grid.at("auc")[r]) s << ',' << v.get<double>();
    s << '\n';
  }
  return s.str();
}

inline nlohmann::json grid_json(const Matrix& g, const std::vector<std::string>& rows,
                                const std::vector<std::string>& cols) {
  nlohmann::json m = nlohmann::json::array();
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < g.cols(); ++c) row.push_back(g(r, c));
    m.push_back(std::move(row));
  }
  return {{"train", rows}, {"test", cols}, {"auc", std::move(m)}};
}

/// Crossgrid over feature directories.
inline nlohmann::json crossgrid_stage(const std::vector<std::filesystem::path>& train_dirs,
                                      const std::vector<std::filesystem::path>& test_dirs, const PipelineConfig& cfg) {
  std::vector<FeatureDataset> tr, te;
  std::vector<std::string> rn, cn;
  for (const auto& d : train_dirs) {
    tr.push_back(load_feature_dir(d));
    rn.push_back(d.filename().string());
  }
  for (const auto& d : test_dirs) {
    te.push_back(load_feature_dir(d));
    cn.push_back(d.filename().string());
  }
  return grid_json(crossgrid(tr, te, cfg.detector, derive_seed(cfg.seed, "crossgrid"), cfg.threads), rn, cn);
}

/// Crossgrid over synthetic site profiles generated in memory. Seeds follow
/// derive_seed(seed, "<site>/train") and derive_seed(seed, "<site>/test").
inline nlohmann::json synthetic_crossgrid_stage(const std::vector<SiteProfile>& profiles, std::size_t n_train,
                                                std::size_t n_test, const PipelineConfig& cfg) {
  std::vector<FeatureDataset> tr, te;
  std::vector<std::string> names;
  for (const auto& p : profiles) {
    tr.push_back(synth_feature_dataset(p, n_train, derive_seed(cfg.seed, p.name + "/train"), cfg.clip_len_s,
                                       cfg.detector.frontend, p.name + "-train", cfg.threads));
    te.push_back(synth_feature_dataset(p, n_test, derive_seed(cfg.seed, p.name + "/test"), cfg.clip_len_s,
                                       cfg.detector.frontend, p.name + "-test", cfg.threads));
    names.push_back(p.name);
  }
  return grid_json(crossgrid(tr, te, cfg.detector, derive_seed(cfg.seed, "crossgrid"), cfg.threads), names, names);
}

inline nlohmann::json calibrate_stage(const std::filesystem::path& fit_sub, const std::filesystem::path& truth_path,
                                      const std::filesystem::path& apply_sub, const std::filesystem::path& out_sub,
                                      const PipelineConfig& cfg) {
  const auto truth = load_manifest(truth_path);
  const auto fit = load_submission(fit_sub);
  const auto params = platt_fit(fit, truth);
  const auto target = apply_sub.empty() ? fit : load_submission(apply_sub);
  const auto calibrated = platt_apply(target, params);
  if (!out_sub.empty()) write_submission(calibrated, out_sub);
  const auto before = calibration_table(fit, truth, cfg.eval.n_bins);
  const auto after = calibration_table(platt_apply(fit, params), truth, cfg.eval.n_bins);
  return {{"platt", {{"a", params.a}, {"b", params.b}, {"iterations", params.iterations}}},
          {"calibration_before", calibration_json(before)},
          {"calibration_after", calibration_json(after)},
          {"max_deviation_before", detail::number_or_null(before.max_deviation(30))},
          {"max_deviation_after", detail::number_or_null(after.max_deviation(30))},
          {"n_applied", calibrated.size()}};
}

inline nlohmann::json flagged_json(const std::vector<FlaggedItem>& items) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : items) {
    out.push_back({{"itemid", f.item_id}, {"label", f.label}, {"score", f.score}, {"deviation", f.deviation}});
  }
  return out;
}

inline nlohmann::json revalidate_stage(const std::vector<std::filesystem::path>& subs,
                                       const std::filesystem::path& truth_path, double neg_above, double pos_below,
                                       const std::filesystem::path& sheet_out) {
  if (subs.empty()) throw Error(ErrorCode::kInvalidArgument, "no submission given");
  std::vector<SubmissionSet> sets;
  for (const auto& p : subs) sets.push_back(load_submission(p));
  const auto truth = load_manifest(truth_path);
  const auto flagged = revalidation_candidates(ensemble_mean(sets), truth, neg_above, pos_below);
  if (!sheet_out.empty()) write_text_file(sheet_out, format_annotation_sheet(flagged));
  return {{"n_submissions", sets.size()},
          {"negative_above", neg_above},
          {"positive_below", pos_below},
          {"n_flagged", flagged.size()},
          {"flagged", flagged_json(flagged)}};
}

inline nlohmann::json mismatch_report_stage(const std::filesystem::path& sub_path,
                                            const std::filesystem::path& truth_path, std::size_t k,
                                            const std::filesystem::path& sheet_out) {
  const auto items = top_mismatched(load_submission(sub_path), load_manifest(truth_path), k);
  if (!sheet_out.empty()) write_text_file(sheet_out, format_annotation_sheet(items));
  return {{"k", k}, {"n_items", items.size()}, {"categories", error_categories()}, {"items", flagged_json(items)}};
}

/// Scores one WAV file, whole or per segment when clip_len_s > 0.
inline nlohmann::json score_file_stage(const std::filesystem::path& model_path, const std::filesystem::path& wav,
                                       double clip_len_s, const PipelineConfig& cfg) {
  const auto model = load_model(model_path);
  AudioClip clip = read_wav(wav);
  if (cfg.normalize != NormalizeMode::kNone) clip = normalize_peak(clip, cfg.headroom_db).clip;
  std::vector<AudioClip> parts;
  if (clip_len_s > 0) {
    parts = segment(clip, clip_len_s);
  } else {
    parts.push_back(clip);
  }
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& p : parts) {
    scores.push_back({{"itemid", p.id}, {"score", model.score(extract_features(p, model.config.frontend))}});
  }
  return {{"file", wav.string()}, {"scores", std::move(scores)}};
}

}  // namespace avibench
