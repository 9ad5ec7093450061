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

// Ranking and calibration metrics for binary detectors.
//
// AUC is computed from midranks, which makes it equal to the probability that
// a random positive outranks a random negative with ties counted as one half.

#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avibench/common.hpp"
#include "avibench/features.hpp"
#include "avibench/manifest.hpp"
#include "avibench/rng.hpp"
#include "avibench/submission.hpp"

namespace avibench {

/// Midranks (1-based); tied values share the mean of their positions.
inline std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::kInvalidArgument, "score/label size mismatch");
  double n_pos = 0, n_neg = 0, rank_sum = 0;
  const auto ranks = midranks(scores);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      n_pos += 1;
      rank_sum += ranks[i];
    } else {
      n_neg += 1;
    }
  }
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::kUndefinedMetric, "AUC undefined: ground truth has a single class");
  }
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

inline double auc(const SubmissionSet& sub, const DatasetManifest& truth) {
  const auto a = align(sub, truth);
  return auc(a.scores, a.labels);
}

/// Agreement between two annotators, one treated as a (binary) score.
inline double interrater_auc(std::span<const int> annotator_a, std::span<const int> annotator_b) {
  std::vector<double> as_scores(annotator_a.begin(), annotator_a.end());
  return auc(as_scores, annotator_b);
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // items scoring >= threshold are called positive
};

struct RocCurve {
  std::vector<RocPoint> points;

  double trapezoid_area() const {
    double a = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
      a += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
    }
    return a;
  }
};

/// One vertex per distinct score threshold, from (0,0) to (1,1).
inline RocCurve roc_points(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  double n_pos = 0;
  for (int l : labels) n_pos += l;
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::kUndefinedMetric, "ROC undefined: single class");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    roc.points.push_back({fp / n_neg, tp / n_pos, scores[order[i]]});
    i = j;
  }
  return roc;
}

inline RocCurve roc_points(const SubmissionSet& sub, const DatasetManifest& truth) {
  const auto a = align(sub, truth);
  return roc_points(a.scores, a.labels);
}

// ---------------------------------------------------------------------------
// Bootstrap

namespace detail {

// Items grouped by distinct score in ascending order, so a weighted AUC is a
// single linear sweep.
struct TieGroups {
  std::vector<std::size_t> order;        // item indices sorted by score
  std::vector<std::size_t> group_start;  // offsets into order, plus end sentinel
};

inline TieGroups tie_groups(std::span<const double> scores) {
  TieGroups g;
  g.order.resize(scores.size());
  std::iota(g.order.begin(), g.order.end(), 0);
  std::stable_sort(g.order.begin(), g.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  for (std::size_t i = 0; i < g.order.size(); ++i) {
    if (i == 0 || scores[g.order[i]] != scores[g.order[i - 1]]) g.group_start.push_back(i);
  }
  g.group_start.push_back(g.order.size());
  return g;
}

// AUC where item i appears weight[i] times; NaN when a class is absent.
inline double weighted_auc(const TieGroups& g, std::span<const int> labels, std::span<const std::uint32_t> weight) {
  double neg_below = 0, pairs = 0, n_pos = 0;
  for (std::size_t k = 0; k + 1 < g.group_start.size(); ++k) {
    double p = 0, q = 0;
    for (std::size_t i = g.group_start[k]; i < g.group_start[k + 1]; ++i) {
      const std::size_t item = g.order[i];
      (labels[item] == 1 ? p : q) += weight[item];
    }
    pairs += p * (neg_below + 0.5 * q);
    neg_below += q;
    n_pos += p;
  }
  if (n_pos == 0 || neg_below == 0) return std::numeric_limits<double>::quiet_NaN();
  return pairs / (n_pos * neg_below);
}

// Linear-interpolated quantile of sorted data (the common "type 7" rule).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = (static_cast<double>(sorted.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

struct BootstrapResult {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int n_boot = 0;
  std::uint64_t seed = 0;
  std::size_t redrawn = 0;  // single-class resamples that were drawn again
  std::vector<double> replicates;
};

/// Item-level percentile bootstrap (2.5 / 97.5). Replicate b draws from
/// derive_seed(seed, "bootstrap", b); single-class resamples are redrawn.
inline BootstrapResult bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                                     int n_boot = 1000, std::uint64_t seed = 0) {
  if (n_boot <= 0) throw Error(ErrorCode::kInvalidArgument, "n_boot must be positive");
  BootstrapResult res;
  res.point = auc(scores, labels);
  res.n_boot = n_boot;
  res.seed = seed;
  const auto groups = detail::tie_groups(scores);
  const std::size_t n = scores.size();
  std::vector<std::uint32_t> weight(n);
  res.replicates.reserve(static_cast<std::size_t>(n_boot));
  for (int b = 0; b < n_boot; ++b) {
    Rng rng(derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(b)));
    while (true) {
      std::fill(weight.begin(), weight.end(), 0u);
      for (std::size_t i = 0; i < n; ++i) ++weight[rng.index(n)];
      const double a = detail::weighted_auc(groups, labels, weight);
      if (!std::isnan(a)) {
        res.replicates.push_back(a);
        break;
      }
      ++res.redrawn;
    }
  }
  std::vector<double> sorted = res.replicates;
  std::sort(sorted.begin(), sorted.end());
  res.lo = detail::quantile_sorted(sorted, 0.025);
  res.hi = detail::quantile_sorted(sorted, 0.975);
  return res;
}

inline BootstrapResult bootstrap_auc(const SubmissionSet& sub, const DatasetManifest& truth, int n_boot = 1000,
                                     std::uint64_t seed = 0) {
  const auto a = align(sub, truth);
  return bootstrap_auc(a.scores, a.labels, n_boot, seed);
}

// ---------------------------------------------------------------------------
// Per-site stratification

struct PerSiteResult {
  std::map<std::string, double> site_auc;
  std::vector<std::string> excluded_sites;  // single-class sites
  double mean = std::numeric_limits<double>::quiet_NaN();
  double pooled = std::numeric_limits<double>::quiet_NaN();
};

inline PerSiteResult per_site_auc(const ScoredLabels& a) {
  PerSiteResult r;
  r.pooled = auc(a.scores, a.labels);
  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> by_site;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    if (a.sites[i].empty()) throw Error(ErrorCode::kInvalidArgument, "item " + a.ids[i] + " has no site tag");
    auto& [s, l] = by_site[a.sites[i]];
    s.push_back(a.scores[i]);
    l.push_back(a.labels[i]);
  }
  double sum = 0;
  for (const auto& [site, data] : by_site) {
    const auto& [s, l] = data;
    const auto pos = std::count(l.begin(), l.end(), 1);
    if (pos == 0 || static_cast<std::size_t>(pos) == l.size()) {
      r.excluded_sites.push_back(site);
      continue;
    }
    const double v = auc(s, l);
    r.site_auc[site] = v;
    sum += v;
  }
  if (!r.site_auc.empty()) r.mean = sum / static_cast<double>(r.site_auc.size());
  return r;
}

inline PerSiteResult per_site_auc(const SubmissionSet& sub, const DatasetManifest& truth) {
  return per_site_auc(align(sub, truth));
}

/// Squared Pearson correlation between paired values.
inline double pearson_r2(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need >= 2 paired values");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy * sxy / (sxx * syy);
}

/// R^2 between pooled AUC and mean per-site AUC across submissions.
inline double pooled_vs_mean_r2(const std::vector<SubmissionSet>& subs, const DatasetManifest& truth) {
  std::vector<double> pooled, mean;
  for (const auto& s : subs) {
    const auto r = per_site_auc(s, truth);
    pooled.push_back(r.pooled);
    mean.push_back(r.mean);
  }
  return pearson_r2(pooled, mean);
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationBin {
  double lo = 0, hi = 0;
  std::size_t count = 0;
  std::optional<double> mean_predicted;  // empty when count == 0
  std::optional<double> empirical_rate;
};

struct CalibrationTable {
  std::vector<CalibrationBin> bins;

  /// Largest |empirical - mean predicted| over bins holding at least min_count items.
  double max_deviation(std::size_t min_count = 1) const {
    double worst = 0;
    for (const auto& b : bins) {
      if (b.count >= min_count && b.count > 0) worst = std::max(worst, std::abs(*b.empirical_rate - *b.mean_predicted));
    }
    return worst;
  }
};

/// Equal-width bins over [0,1]; the last bin is closed on the right.
inline CalibrationTable calibration_table(std::span<const double> scores, std::span<const int> labels, int n_bins = 10) {
  if (n_bins <= 0) throw Error(ErrorCode::kInvalidArgument, "n_bins must be positive");
  CalibrationTable t;
  std::vector<double> sum_pred(static_cast<std::size_t>(n_bins), 0.0), sum_pos(static_cast<std::size_t>(n_bins), 0.0);
  t.bins.resize(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    t.bins[static_cast<std::size_t>(b)].lo = static_cast<double>(b) / n_bins;
    t.bins[static_cast<std::size_t>(b)].hi = static_cast<double>(b + 1) / n_bins;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(scores[i] * n_bins)), 0, n_bins - 1));
    t.bins[b].count++;
    sum_pred[b] += scores[i];
    sum_pos[b] += labels[i];
  }
  for (std::size_t b = 0; b < t.bins.size(); ++b) {
    if (t.bins[b].count == 0) continue;
    const double c = static_cast<double>(t.bins[b].count);
    t.bins[b].mean_predicted = sum_pred[b] / c;
    t.bins[b].empirical_rate = sum_pos[b] / c;
  }
  return t;
}

inline CalibrationTable calibration_table(const SubmissionSet& sub, const DatasetManifest& truth, int n_bins = 10) {
  const auto a = align(sub, truth);
  return calibration_table(a.scores, a.labels, n_bins);
}

// ---------------------------------------------------------------------------
// Platt scaling

struct PlattParams {
  double a = 0.0;
  double b = 0.0;
  int iterations = 0;

  double apply(double s) const {
    const double z = a * s + b;
    return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  }
};

/// Fits p(s) = 1 / (1 + exp(a s + b)) by Newton's method with backtracking on
/// the log-loss against the smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2).
inline PlattParams platt_fit(std::span<const double> scores, std::span<const int> labels) {
  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::kUndefinedMetric, "Platt scaling needs both classes");
  const double hi_t = (n_pos + 1) / (n_pos + 2);
  const double lo_t = 1 / (n_neg + 2);
  std::vector<double> t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i] == 1 ? hi_t : lo_t;

  auto objective = [&](double a, double b) {
    double f = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double z = scores[i] * a + b;
      f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  PlattParams p{0.0, std::log((n_neg + 1) / (n_pos + 1)), 0};
  double fval = objective(p.a, p.b);
  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10, kSigma = 1e-12, kEps = 1e-5;
  for (int it = 0; it < kMaxIter; ++it) {
    double h11 = kSigma, h22 = kSigma, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double z = scores[i] * p.a + p.b;
      double prob, q;
      if (z >= 0) {
        prob = std::exp(-z) / (1 + std::exp(-z));
        q = 1 / (1 + std::exp(-z));
      } else {
        prob = 1 / (1 + std::exp(z));
        q = std::exp(z) / (1 + std::exp(z));
      }
      const double d2 = prob * q;
      h11 += scores[i] * scores[i] * d2;
      h22 += d2;
      h21 += scores[i] * d2;
      const double d1 = t[i] - prob;
      g1 += scores[i] * d1;
      g2 += d1;
    }
    p.iterations = it;
    if (std::abs(g1) < kEps && std::abs(g2) < kEps) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1;
    while (step >= kMinStep) {
      const double na = p.a + step * da, nb = p.b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        p.a = na;
        p.b = nb;
        fval = nf;
        break;
      }
      step /= 2;
    }
    if (step < kMinStep) break;
  }
  return p;
}

inline PlattParams platt_fit(const SubmissionSet& sub, const DatasetManifest& calibration_truth) {
  const auto a = align(sub, calibration_truth);
  return platt_fit(a.scores, a.labels);
}

inline SubmissionSet platt_apply(const SubmissionSet& sub, const PlattParams& p) {
  SubmissionSet out;
  out.team = sub.team;
  out.timestamp = sub.timestamp;
  for (const auto& e : sub.entries()) out.add(e.item_id, p.apply(e.score));
  return out;
}

// ---------------------------------------------------------------------------
// Cross-submission analyses

/// Rank-transforms each submission (midranks over the shared item set),
/// centres across submissions and projects onto the leading principal axes.
/// Each axis is signed so that its largest-magnitude coordinate is positive.
inline Matrix rank_pca(const std::vector<SubmissionSet>& subs, int dims = 2) {
  if (subs.size() < 3) throw Error(ErrorCode::kInvalidArgument, "rank PCA needs at least 3 submissions");
  if (dims <= 0) throw Error(ErrorCode::kInvalidArgument, "dims must be positive");
  std::vector<std::string> ids;
  for (const auto& e : subs.front().entries()) ids.push_back(e.item_id);
  std::sort(ids.begin(), ids.end());
  for (const auto& s : subs) {
    if (s.size() != ids.size()) throw Error(ErrorCode::kInvalidArgument, "submissions cover different item sets");
  }
  const auto m = static_cast<Eigen::Index>(subs.size());
  const auto n = static_cast<Eigen::Index>(ids.size());
  Matrix ranks(m, n);
  for (Eigen::Index s = 0; s < m; ++s) {
    std::vector<double> v(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) v[i] = subs[static_cast<std::size_t>(s)].at(ids[i]);
    const auto r = midranks(v);
    for (Eigen::Index i = 0; i < n; ++i) ranks(s, i) = r[static_cast<std::size_t>(i)];
  }
  const Matrix centered = ranks.rowwise() - ranks.colwise().mean();
  const Matrix gram = centered * centered.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const int k = std::min<int>(dims, static_cast<int>(m));
  Matrix coords = Matrix::Zero(m, dims);
  for (int c = 0; c < k; ++c) {
    const Eigen::Index col = m - 1 - c;  // eigenvalues ascend
    const double lambda = std::max(0.0, eig.eigenvalues()(col));
    Vector axis = eig.eigenvectors().col(col) * std::sqrt(lambda);
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    coords.col(c) = axis;
  }
  return coords;
}

inline SubmissionSet ensemble_mean(const std::vector<SubmissionSet>& subs) {
  if (subs.empty()) throw Error(ErrorCode::kInvalidArgument, "no submissions to average");
  SubmissionSet out;
  out.team = "ensemble";
  for (const auto& e : subs.front().entries()) {
    double acc = 0;
    for (const auto& s : subs) {
      if (!s.contains(e.item_id)) {
        throw Error(ErrorCode::kInvalidArgument, "item " + e.item_id + " missing from a submission");
      }
      acc += s.at(e.item_id);
    }
    out.add(e.item_id, acc / static_cast<double>(subs.size()));
  }
  for (const auto& s : subs) {
    if (s.size() != out.size()) throw Error(ErrorCode::kInvalidArgument, "submissions cover different item sets");
  }
  return out;
}

struct FlaggedItem {
  std::string item_id;
  int label;
  double score;
  double deviation;  // |score - label|
};

namespace detail {

inline void sort_by_deviation(std::vector<FlaggedItem>& items) {
  std::sort(items.begin(), items.end(), [](const FlaggedItem& a, const FlaggedItem& b) {
    return a.deviation != b.deviation ? a.deviation > b.deviation : a.item_id < b.item_id;
  });
}

}  // namespace detail

/// Items whose label disagrees with the ensemble decision: negatives scoring
/// above neg_thresh and positives scoring below pos_thresh. Largest deviation first.
inline std::vector<FlaggedItem> revalidation_candidates(const SubmissionSet& mean_sub, const DatasetManifest& truth,
                                                        double neg_thresh = 0.2, double pos_thresh = 0.3) {
  const auto a = align(mean_sub, truth);
  std::vector<FlaggedItem> out;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    const bool flag = a.labels[i] == 0 ? a.scores[i] > neg_thresh : a.scores[i] < pos_thresh;
    if (flag) out.push_back({a.ids[i], a.labels[i], a.scores[i], std::abs(a.scores[i] - a.labels[i])});
  }
  detail::sort_by_deviation(out);
  return out;
}

/// Error categories for manual annotation of the most mismatched items.
inline const std::vector<std::string>& error_categories() {
  static const std::vector<std::string> kCategories = {
      "clear", "dontknow", "faint", "short-call", "noise-masking", "insect",
      "human", "rain", "unusual-bird", "misc-distractor", "misc-mammal"};
  return kCategories;
}

inline std::vector<FlaggedItem> top_mismatched(const SubmissionSet& sub, const DatasetManifest& truth,
                                               std::size_t k = 500) {
  const auto a = align(sub, truth);
  std::vector<FlaggedItem> out;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    out.push_back({a.ids[i], a.labels[i], a.scores[i], std::abs(a.scores[i] - a.labels[i])});
  }
  detail::sort_by_deviation(out);
  if (out.size() > k) out.resize(k);
  return out;
}

/// Annotation sheet: one row per item, one empty column per error category.
inline std::string format_annotation_sheet(const std::vector<FlaggedItem>& items) {
  std::string out = "rank,itemid,label,score,deviation,error_type";
  for (const auto& c : error_categories()) out += "," + c;
  out += '\n';
  char buf[64];
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    out += std::to_string(i + 1) + ',' + it.item_id + ',' + std::to_string(it.label) + ',';
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", it.score, it.deviation);
    out += buf;
    if (it.deviation < 0.5) out += ",agree";
    else out += it.label == 1 ? ",false-negative" : ",false-positive";
    out += std::string(error_categories().size(), ',');
    out += '\n';
  }
  return out;
}

}  // namespace avibench
