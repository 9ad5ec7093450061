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
#include <cmath>
#include <numeric>
#include <thread>
#include <vector>

#include "avibench/binary_io.hpp"
#include "avibench/common.hpp"
#include "avibench/features.hpp"
#include "avibench/rng.hpp"

namespace avibench {

struct TreeNode {
  // Leaves have feature == -1.
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double positive_fraction = 0.0;

  bool is_leaf() const { return feature < 0; }
};

/// Binary classification tree with axis-aligned splits; leaves store the
/// fraction of positive (bootstrap-weighted) training samples.
class DecisionTree {
 public:
  const std::vector<TreeNode>& nodes() const { return nodes_; }

  double score(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return nodes_[i].positive_fraction;
  }

  // Index of the leaf reached by x.
  std::size_t leaf_of(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
    }
    return i;
  }

  static DecisionTree fit(const Matrix& x, const std::vector<int>& y,
                          std::vector<std::size_t> samples, int max_depth, int mtry, Rng& rng);

  void save(BinaryWriter& w) const {
    w.u32(static_cast<std::uint32_t>(nodes_.size()));
    for (const auto& n : nodes_) {
      w.i32(n.feature);
      w.f64(n.threshold);
      w.i32(n.left);
      w.i32(n.right);
      w.f64(n.positive_fraction);
    }
  }
  static DecisionTree load(BinaryReader& r) {
    DecisionTree t;
    t.nodes_.resize(r.u32());
    for (auto& n : t.nodes_) {
      n.feature = r.i32();
      n.threshold = r.f64();
      n.left = r.i32();
      n.right = r.i32();
      n.positive_fraction = r.f64();
    }
    if (t.nodes_.empty()) throw Error(ErrorCode::kFormat, "empty tree");
    return t;
  }

 private:
  std::vector<TreeNode> nodes_;
};

namespace detail {

inline double gini(double pos, double total) {
  if (total <= 0) return 0.0;
  const double p = pos / total;
  return 2.0 * p * (1.0 - p);
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

inline SplitChoice best_split(const Matrix& x, const std::vector<int>& y,
                              std::span<const std::size_t> samples,
                              const std::vector<int>& features) {
  const double n = static_cast<double>(samples.size());
  double n_pos = 0;
  for (std::size_t s : samples) n_pos += y[s];
  const double parent = gini(n_pos, n);
  SplitChoice best;
  std::vector<std::pair<double, int>> column(samples.size());
  for (int f : features) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      column[i] = {x(static_cast<Eigen::Index>(samples[i]), f), y[samples[i]]};
    }
    std::sort(column.begin(), column.end());
    double left_n = 0, left_pos = 0;
    for (std::size_t i = 0; i + 1 < column.size(); ++i) {
      left_n += 1;
      left_pos += column[i].second;
      if (column[i].first == column[i + 1].first) continue;
      const double right_n = n - left_n;
      const double gain = parent - (left_n / n) * gini(left_pos, left_n) -
                          (right_n / n) * gini(n_pos - left_pos, right_n);
      if (gain > best.gain + 1e-12) {
        best.feature = f;
        // Midpoint, nudged so that the left value always satisfies <=.
        double t = column[i].first + (column[i + 1].first - column[i].first) / 2;
        if (!(t < column[i + 1].first)) t = column[i].first;
        best.threshold = t;
        best.gain = gain;
      }
    }
  }
  return best;
}

}  // namespace detail

inline DecisionTree DecisionTree::fit(const Matrix& x, const std::vector<int>& y,
                                      std::vector<std::size_t> samples, int max_depth, int mtry,
                                      Rng& rng) {
  DecisionTree tree;
  const int dim = static_cast<int>(x.cols());
  mtry = std::clamp(mtry, 1, dim);
  struct Pending {
    std::size_t node;
    std::size_t begin, end;
    int depth;
  };
  tree.nodes_.push_back({});
  std::vector<Pending> stack{{0, 0, samples.size(), 0}};
  std::vector<int> all_features(static_cast<std::size_t>(dim));
  std::iota(all_features.begin(), all_features.end(), 0);

  while (!stack.empty()) {
    const Pending p = stack.back();
    stack.pop_back();
    std::span<std::size_t> span(samples.data() + p.begin, p.end - p.begin);
    double pos = 0;
    for (std::size_t s : span) pos += y[s];
    const double frac = pos / static_cast<double>(span.size());
    tree.nodes_[p.node].positive_fraction = frac;
    if (p.depth >= max_depth || span.size() < 2 || frac == 0.0 || frac == 1.0) continue;

    for (int i = 0; i < mtry; ++i) {
      std::swap(all_features[static_cast<std::size_t>(i)],
                all_features[static_cast<std::size_t>(i) + rng.index(static_cast<std::size_t>(dim - i))]);
    }
    std::vector<int> chosen(all_features.begin(), all_features.begin() + mtry);
    std::sort(chosen.begin(), chosen.end());
    const auto split = detail::best_split(x, y, span, chosen);
    if (split.feature < 0) continue;

    const auto mid = std::stable_partition(span.begin(), span.end(), [&](std::size_t s) {
      return x(static_cast<Eigen::Index>(s), split.feature) <= split.threshold;
    });
    const std::size_t n_left = static_cast<std::size_t>(mid - span.begin());
    auto& node = tree.nodes_[p.node];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = static_cast<std::int32_t>(tree.nodes_.size());
    node.right = node.left + 1;
    const auto left = static_cast<std::size_t>(node.left);
    tree.nodes_.push_back({});
    tree.nodes_.push_back({});
    stack.push_back({left + 1, p.begin + n_left, p.end, p.depth + 1});
    stack.push_back({left, p.begin, p.begin + n_left, p.depth + 1});
  }
  return tree;
}

struct ForestOptions {
  int n_trees = 200;
  int max_depth = 25;
  int mtry = 0;  // 0 = floor(sqrt(dim))
  int threads = 1;
};

class RandomForest {
 public:
  RandomForest() = default;
  explicit RandomForest(std::vector<DecisionTree> trees) : trees_(std::move(trees)) {}

  const std::vector<DecisionTree>& trees() const { return trees_; }

  /// Mean over trees of the reached leaf's positive fraction.
  double score(std::span<const double> x) const {
    double acc = 0.0;
    for (const auto& t : trees_) acc += t.score(x);
    return acc / static_cast<double>(trees_.size());
  }
  double score(const Vector& x) const { return score(std::span<const double>(x.data(), static_cast<std::size_t>(x.size()))); }

  void save(BinaryWriter& w) const {
    w.u32(static_cast<std::uint32_t>(trees_.size()));
    for (const auto& t : trees_) t.save(w);
  }
  static RandomForest load(BinaryReader& r) {
    std::vector<DecisionTree> trees(r.u32());
    for (auto& t : trees) t = DecisionTree::load(r);
    return RandomForest(std::move(trees));
  }

 private:
  std::vector<DecisionTree> trees_;
};

/// Bagged Gini trees. Tree i draws its bootstrap and feature subsets from
/// derive_seed(seed, "tree", i), so the forest is identical for any thread count.
inline RandomForest rf_fit(const Matrix& x, const std::vector<int>& labels, const ForestOptions& opt,
                           std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (labels.size() != n) throw Error(ErrorCode::kInvalidArgument, "label count mismatch");
  if (n == 0 || x.cols() == 0) throw Error(ErrorCode::kInsufficientData, "empty training set");
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos == 0 || static_cast<std::size_t>(n_pos) == n) {
    throw Error(ErrorCode::kInsufficientData, "random forest needs both classes");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
  }
  if (opt.n_trees <= 0 || opt.max_depth < 0) throw Error(ErrorCode::kInvalidArgument, "bad forest size");
  const int mtry = opt.mtry > 0 ? opt.mtry
                                : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(x.cols())))));
  std::vector<DecisionTree> trees(static_cast<std::size_t>(opt.n_trees));
  auto build = [&](std::size_t t) {
    Rng rng(derive_seed(seed, "tree", t));
    std::vector<std::size_t> boot(n);
    for (auto& b : boot) b = rng.index(n);
    trees[t] = DecisionTree::fit(x, labels, std::move(boot), opt.max_depth, mtry, rng);
  };
  const int threads = std::max(1, std::min(opt.threads, opt.n_trees));
  if (threads == 1) {
    for (std::size_t t = 0; t < trees.size(); ++t) build(t);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = static_cast<std::size_t>(w); t < trees.size(); t += static_cast<std::size_t>(threads)) build(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return RandomForest(std::move(trees));
}

inline double rf_score(const RandomForest& model, const Vector& x) { return model.score(x); }

}  // namespace avibench
