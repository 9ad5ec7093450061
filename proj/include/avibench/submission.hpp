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
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "avibench/common.hpp"
#include "avibench/manifest.hpp"

namespace avibench {

/// Item id -> graded prediction, in insertion order.
class SubmissionSet {
 public:
  struct Entry {
    std::string item_id;
    double score;
  };

  std::string team;
  std::string timestamp;

  SubmissionSet() = default;

  void add(std::string item_id, double score) {
    if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
      throw Error(ErrorCode::kValidation, "prediction for " + item_id + " outside [0,1]");
    }
    if (index_.contains(item_id)) throw Error(ErrorCode::kValidation, "duplicate id: " + item_id);
    index_.emplace(item_id, entries_.size());
    entries_.push_back({std::move(item_id), score});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(const std::string& id) const { return index_.contains(id); }

  double at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorCode::kNotFound, "no prediction for " + id);
    return entries_[it->second].score;
  }

  std::vector<double> scores() const {
    std::vector<double> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.score);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parses `itemid,prediction` CSV. Errors cite the offending line.
inline SubmissionSet parse_submission(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kValidation, "empty submission");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "itemid,prediction") {
    throw Error(ErrorCode::kValidation, "submission header must be 'itemid,prediction'");
  }
  SubmissionSet sub;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (f.size() != 2 || f[0].empty()) throw Error(ErrorCode::kValidation, where + "expected 'itemid,prediction'");
    double v;
    std::size_t used = 0;
    try {
      v = std::stod(f[1], &used);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kValidation, where + "prediction is not a number");
    }
    if (used != f[1].size()) throw Error(ErrorCode::kValidation, where + "prediction is not a number");
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(ErrorCode::kValidation, where + "prediction " + f[1] + " outside [0,1]");
    }
    if (sub.contains(f[0])) throw Error(ErrorCode::kValidation, where + "duplicate id " + f[0]);
    sub.add(f[0], v);
  }
  return sub;
}

inline SubmissionSet load_submission(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open submission " + path.string());
  return parse_submission(in);
}

inline std::string format_submission(const SubmissionSet& sub) {
  std::ostringstream out;
  out.precision(17);
  out << "itemid,prediction\n";
  for (const auto& e : sub.entries()) out << e.item_id << ',' << e.score << '\n';
  return out.str();
}

inline void write_submission(const SubmissionSet& sub, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << format_submission(sub);
}

/// Scores and 0/1 labels for the submission's items with a known label.
struct ScoredLabels {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> sites;  // "" when untagged
};

inline ScoredLabels align(const SubmissionSet& sub, const DatasetManifest& truth) {
  ScoredLabels out;
  for (const auto& e : sub.entries()) {
    const ManifestItem* item = truth.find(e.item_id);
    if (!item) throw Error(ErrorCode::kNotFound, "item " + e.item_id + " not in ground truth");
    if (item->label == Label::kUnknown) continue;
    out.ids.push_back(e.item_id);
    out.scores.push_back(e.score);
    out.labels.push_back(item->label == Label::kPositive ? 1 : 0);
    out.sites.push_back(item->site.value_or(""));
  }
  return out;
}

}  // namespace avibench
