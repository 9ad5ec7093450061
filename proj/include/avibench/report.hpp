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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "avibench/common.hpp"
#include "avibench/metrics.hpp"
#include "avibench/svg.hpp"
#include "json.hpp"

namespace avibench {

struct EvalOptions {
  int n_boot = 1000;
  std::uint64_t seed = 0;
  int n_bins = 10;
};

struct EvalReport {
  std::size_t n_items = 0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  double auc = 0;
  BootstrapResult bootstrap;
  std::optional<PerSiteResult> per_site;  // present when every item has a site tag
  RocCurve roc;
  CalibrationTable calibration;
};

inline EvalReport evaluate(const SubmissionSet& sub, const DatasetManifest& truth, const EvalOptions& opt = {}) {
  const auto a = align(sub, truth);
  EvalReport r;
  r.n_items = a.ids.size();
  r.n_positive = static_cast<std::size_t>(std::count(a.labels.begin(), a.labels.end(), 1));
  r.n_negative = r.n_items - r.n_positive;
  r.auc = auc(a.scores, a.labels);
  r.bootstrap = bootstrap_auc(a.scores, a.labels, opt.n_boot, opt.seed);
  if (std::none_of(a.sites.begin(), a.sites.end(), [](const std::string& s) { return s.empty(); })) {
    r.per_site = per_site_auc(a);
  }
  r.roc = roc_points(a.scores, a.labels);
  r.calibration = calibration_table(a.scores, a.labels, opt.n_bins);
  return r;
}

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

}  // namespace detail

inline nlohmann::json bootstrap_json(const BootstrapResult& b) {
  return {{"lo", b.lo}, {"hi", b.hi}, {"n_boot", b.n_boot}, {"seed", b.seed}, {"redrawn", b.redrawn}};
}

inline nlohmann::json per_site_json(const PerSiteResult& p) {
  nlohmann::json sites = nlohmann::json::object();
  for (const auto& [site, v] : p.site_auc) sites[site] = v;
  return {{"sites", sites},
          {"excluded", p.excluded_sites},
          {"mean", detail::number_or_null(p.mean)},
          {"pooled", detail::number_or_null(p.pooled)}};
}

inline nlohmann::json calibration_json(const CalibrationTable& t) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : t.bins) {
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"count", b.count},
                    {"mean_predicted", detail::optional_json(b.mean_predicted)},
                    {"empirical_rate", detail::optional_json(b.empirical_rate)},
                    {"empty", b.count == 0}});
  }
  return bins;
}

inline nlohmann::json roc_json(const RocCurve& roc) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : roc.points) pts.push_back({p.fpr, p.tpr, detail::number_or_null(p.threshold)});
  return pts;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["n_items"] = r.n_items;
  j["n_positive"] = r.n_positive;
  j["n_negative"] = r.n_negative;
  j["auc"] = r.auc;
  j["ci"] = bootstrap_json(r.bootstrap);
  j["per_site"] = r.per_site ? per_site_json(*r.per_site) : nlohmann::json();
  j["roc"] = roc_json(r.roc);
  j["calibration"] = calibration_json(r.calibration);
  return j;
}

inline std::string roc_csv(const RocCurve& roc) {
  std::string out = "fpr,tpr,threshold\n";
  char buf[96];
  for (const auto& p : roc.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
    out += buf;
  }
  return out;
}

inline std::string calibration_csv(const CalibrationTable& t) {
  std::string out = "lo,hi,count,mean_predicted,empirical_rate\n";
  char buf[160];
  for (const auto& b : t.bins) {
    if (b.count == 0) {
      std::snprintf(buf, sizeof buf, "%.3f,%.3f,0,,\n", b.lo, b.hi);
    } else {
      std::snprintf(buf, sizeof buf, "%.3f,%.3f,%zu,%.17g,%.17g\n", b.lo, b.hi, b.count, *b.mean_predicted,
                    *b.empirical_rate);
    }
    out += buf;
  }
  return out;
}

inline std::string roc_svg(const RocCurve& roc, const std::string& title) {
  svg::Plot p{title, "false positive rate", "true positive rate", 0, 1, 0, 1, {}, true};
  svg::Series s;
  for (const auto& pt : roc.points) s.points.emplace_back(pt.fpr, pt.tpr);
  p.series.push_back(std::move(s));
  return svg::render(p);
}

inline std::string calibration_svg(const CalibrationTable& t, const std::string& title) {
  svg::Plot p{title, "mean predicted score", "empirical positive rate", 0, 1, 0, 1, {}, true};
  svg::Series s;
  for (const auto& b : t.bins) {
    if (b.count > 0) s.points.emplace_back(*b.mean_predicted, *b.empirical_rate);
  }
  p.series.push_back(std::move(s));
  return svg::render(p);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

/// roc.csv, roc.svg, calibration.csv and calibration.svg under dir.
inline void write_report_figures(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "roc.csv", roc_csv(r.roc));
  char title[64];
  std::snprintf(title, sizeof title, "ROC (AUC %.4f)", r.auc);
  write_text_file(dir / "roc.svg", roc_svg(r.roc, title));
  write_text_file(dir / "calibration.csv", calibration_csv(r.calibration));
  write_text_file(dir / "calibration.svg", calibration_svg(r.calibration, "Calibration"));
}

}  // namespace avibench
