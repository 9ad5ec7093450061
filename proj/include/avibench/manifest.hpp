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
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "avibench/common.hpp"

namespace avibench {

enum class Label { kNegative, kPositive, kUnknown };

inline char label_token(Label l) {
  switch (l) {
    case Label::kNegative: return '0';
    case Label::kPositive: return '1';
    case Label::kUnknown: return '?';
  }
  return '?';
}

struct ManifestItem {
  std::string item_id;
  Label label = Label::kUnknown;
  std::optional<std::string> site;
  std::string path;

  bool operator==(const ManifestItem&) const = default;
};

/// Ordered id -> {label, site, path} table. Row order is preserved so that
/// writing a loaded manifest reproduces the file.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  explicit DatasetManifest(std::vector<ManifestItem> items) {
    for (auto& item : items) add(std::move(item));
  }

  void add(ManifestItem item) {
    if (item.item_id.empty()) throw Error(ErrorCode::kFormat, "empty item id");
    if (index_.contains(item.item_id)) {
      throw Error(ErrorCode::kFormat, "duplicate id: " + item.item_id);
    }
    index_.emplace(item.item_id, items_.size());
    items_.push_back(std::move(item));
  }

  const std::vector<ManifestItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  const ManifestItem* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  const ManifestItem& at(std::string_view id) const {
    const ManifestItem* item = find(id);
    if (!item) throw Error(ErrorCode::kNotFound, "unknown item id: " + std::string(id));
    return *item;
  }

  bool fully_labeled() const {
    return std::none_of(items_.begin(), items_.end(),
                        [](const ManifestItem& i) { return i.label == Label::kUnknown; });
  }

  std::size_t count(Label l) const {
    return static_cast<std::size_t>(std::count_if(
        items_.begin(), items_.end(), [l](const ManifestItem& i) { return i.label == l; }));
  }

  bool operator==(const DatasetManifest& other) const { return items_ == other.items_; }

 private:
  std::vector<ManifestItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline Label parse_label(std::string_view token) {
  if (token == "1") return Label::kPositive;
  if (token == "0") return Label::kNegative;
  if (token == "?") return Label::kUnknown;
  throw Error(ErrorCode::kFormat, "malformed label token '" + std::string(token) + "'");
}

// Relative, and never escapes the dataset root via "..".
inline bool path_stays_under_root(const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || path.has_root_name()) return false;
  int depth = 0;
  for (const auto& part : path.lexically_normal()) {
    if (part == "..") {
      if (--depth < 0) return false;
    } else if (part != ".") {
      ++depth;
    }
  }
  return depth > 0;
}

inline DatasetManifest parse_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kFormat, "empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "itemid,hasbird,site,path") {
    throw Error(ErrorCode::kFormat, "manifest header must be 'itemid,hasbird,site,path'");
  }
  DatasetManifest manifest;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) {
      throw Error(ErrorCode::kFormat,
                  "manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ManifestItem item{f[0], parse_label(f[1]),
                      f[2].empty() ? std::nullopt : std::optional<std::string>(f[2]), f[3]};
    if (!path_stays_under_root(item.path)) {
      throw Error(ErrorCode::kFormat, "manifest line " + std::to_string(line_no) +
                                          ": path escapes dataset root: " + item.path);
    }
    manifest.add(std::move(item));
  }
  return manifest;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  return parse_manifest(in);
}

inline std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "itemid,hasbird,site,path\n";
  for (const auto& item : manifest.items()) {
    for (const std::string* field : {&item.item_id, &item.path}) {
      if (field->find_first_of(",\n\r") != std::string::npos) {
        throw Error(ErrorCode::kFormat, "field contains a separator: " + *field);
      }
    }
    out << item.item_id << ',' << label_token(item.label) << ','
        << item.site.value_or("") << ',' << item.path << '\n';
  }
  return out.str();
}

inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write manifest " + path.string());
  out << format_manifest(manifest);
}

}  // namespace avibench
