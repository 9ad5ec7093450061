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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "avibench/common.hpp"
#include "avibench/manifest.hpp"
#include "avibench/metrics.hpp"
#include "avibench/report.hpp"
#include "avibench/rng.hpp"
#include "avibench/submission.hpp"
#include "json.hpp"

namespace avibench {

/// Seconds since the Unix epoch, UTC.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline std::int64_t utc_day(std::int64_t t) { return t >= 0 ? t / 86400 : -((-t + 86399) / 86400); }

inline std::string format_utc(std::int64_t t) {
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

enum class Phase { kOpen, kClosed };

inline const char* phase_name(Phase p) { return p == Phase::kOpen ? "open" : "closed"; }

struct TeamRecord {
  std::string team_id;
  std::string name;
  std::string token;
  std::optional<std::int64_t> last_submission_day;
  std::size_t n_submissions = 0;

  bool operator==(const TeamRecord&) const = default;
};

struct SubmissionRecord {
  std::string submission_id;
  std::string team_id;
  std::int64_t timestamp = 0;
  std::shared_ptr<const SubmissionSet> predictions;
  std::optional<double> preview_auc;  // undefined when the preview subset is single-class
  double final_auc = 0;               // private until closed
  std::shared_ptr<const EvalReport> report;  // set on close
};

struct ChallengeState {
  std::size_t n_test = 0;
  double preview_fraction = 0.15;
  std::uint64_t seed = 0;
  std::vector<std::string> preview_ids;
  Phase phase = Phase::kOpen;
  std::optional<std::int64_t> closed_at;
  std::vector<TeamRecord> teams;
  std::vector<SubmissionRecord> submissions;

  const TeamRecord* team_by_token(std::string_view token) const {
    for (const auto& t : teams) {
      if (!token.empty() && t.token == token) return &t;
    }
    return nullptr;
  }
  const TeamRecord* team_by_id(std::string_view id) const {
    for (const auto& t : teams) {
      if (t.team_id == id) return &t;
    }
    return nullptr;
  }
  const SubmissionRecord* submission(std::string_view id) const {
    for (const auto& s : submissions) {
      if (s.submission_id == id) return &s;
    }
    return nullptr;
  }
};

/// Every field of the state, private ones included, as canonical JSON.
inline nlohmann::json state_digest(const ChallengeState& s) {
  nlohmann::json teams = nlohmann::json::array();
  for (const auto& t : s.teams) {
    teams.push_back({{"team_id", t.team_id},
                     {"name", t.name},
                     {"token", t.token},
                     {"last_submission_day", t.last_submission_day ? nlohmann::json(*t.last_submission_day)
                                                                   : nlohmann::json()},
                     {"n_submissions", t.n_submissions}});
  }
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& r : s.submissions) {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& e : r.predictions->entries()) preds.push_back({e.item_id, e.score});
    subs.push_back({{"submission_id", r.submission_id},
                    {"team_id", r.team_id},
                    {"timestamp", r.timestamp},
                    {"preview_auc", detail::optional_json(r.preview_auc)},
                    {"final_auc", r.final_auc},
                    {"report", r.report ? to_json(*r.report) : nlohmann::json()},
                    {"predictions", std::move(preds)}});
  }
  return {{"n_test", s.n_test},
          {"preview_fraction", s.preview_fraction},
          {"seed", s.seed},
          {"preview_ids", s.preview_ids},
          {"phase", phase_name(s.phase)},
          {"closed_at", s.closed_at ? nlohmann::json(*s.closed_at) : nlohmann::json()},
          {"teams", std::move(teams)},
          {"submissions", std::move(subs)}};
}

inline std::size_t preview_size(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

/// Seeded shuffle, first preview_size ids, returned in manifest order.
inline std::vector<std::string> choose_preview(const DatasetManifest& truth, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "preview_fraction must be in (0, 1]");
  }
  std::vector<std::size_t> idx(truth.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "preview"));
  rng.shuffle(idx);
  idx.resize(preview_size(truth.size(), fraction));
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(truth.items()[i].item_id);
  return out;
}

/// Parses a submission body and checks it covers every test id exactly once.
/// Offending ids are listed, at most 10 per category.
inline SubmissionSet validate_submission(std::string_view body, const DatasetManifest& truth) {
  constexpr std::size_t kListed = 10;
  std::istringstream in{std::string(body)};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kValidation, "empty submission");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "itemid,prediction") {
    throw Error(ErrorCode::kValidation, "submission header must be 'itemid,prediction'");
  }
  SubmissionSet sub;
  std::vector<std::string> bad_rows, unknown, duplicate;
  std::size_t n_bad_rows = 0, n_unknown = 0, n_duplicate = 0;
  std::size_t line_no = 1;
  auto note = [&](std::vector<std::string>& list, std::size_t& count, std::string what) {
    if (list.size() < kListed) list.push_back(std::move(what));
    ++count;
  };
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (f.size() != 2 || f[0].empty()) {
      note(bad_rows, n_bad_rows, where + " malformed");
      continue;
    }
    double v = 0;
    std::size_t used = 0;
    try {
      v = std::stod(f[1], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != f[1].size()) {
      note(bad_rows, n_bad_rows, where + " prediction '" + f[1] + "' is not a number");
      continue;
    }
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      note(bad_rows, n_bad_rows, where + " prediction " + f[1] + " outside [0,1]");
      continue;
    }
    if (!seen.insert(f[0]).second) {
      note(duplicate, n_duplicate, f[0]);
      continue;
    }
    if (!truth.find(f[0])) {
      note(unknown, n_unknown, f[0]);
      continue;
    }
    sub.add(f[0], v);
  }
  std::vector<std::string> missing;
  std::size_t n_missing = 0;
  for (const auto& item : truth.items()) {
    if (!seen.contains(item.item_id)) note(missing, n_missing, item.item_id);
  }
  std::string detail;
  auto section = [&](const char* title, const std::vector<std::string>& list, std::size_t count) {
    if (count == 0) return;
    if (!detail.empty()) detail += "; ";
    detail += std::string(title) + " (" + std::to_string(count) + "): ";
    for (std::size_t i = 0; i < list.size(); ++i) detail += (i ? ", " : "") + list[i];
    if (count > list.size()) detail += ", ...";
  };
  section("invalid rows", bad_rows, n_bad_rows);
  section("unknown ids", unknown, n_unknown);
  section("duplicate ids", duplicate, n_duplicate);
  section("missing ids", missing, n_missing);
  if (!detail.empty()) throw Error(ErrorCode::kValidation, detail);
  return sub;
}

struct ServiceOptions {
  double preview_fraction = 0.15;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;  // empty keeps the event log in memory only
  Clock clock = system_clock_seconds;
  int n_boot = 1000;
};

struct SubmitResult {
  std::string submission_id;
  std::string team_id;
  std::int64_t timestamp = 0;
  std::optional<double> preview_auc;
};

struct TimelinePoint {
  std::string submission_id;
  std::int64_t timestamp = 0;
  std::optional<double> preview_auc;
};

struct PreviewEntry {
  std::string team_id;
  std::string name;
  std::optional<double> best_preview_auc;
  std::size_t n_submissions = 0;
  std::vector<TimelinePoint> timeline;
};

struct FinalEntry {
  std::string team_id;
  std::string name;
  std::string submission_id;
  double final_auc = 0;
  double ci_lo = 0;
  double ci_hi = 0;
  std::size_t n_submissions = 0;
};

/// Challenge mechanics over a private, fully labelled test manifest. Every
/// mutation is appended to a JSON-lines event log before it is published;
/// readers see immutable snapshots.
class ChallengeService {
 public:
  static constexpr const char* kLogName = "events.jsonl";

  ChallengeService(DatasetManifest truth, ServiceOptions opt) : truth_(std::move(truth)), opt_(std::move(opt)) {
    if (truth_.empty()) throw Error(ErrorCode::kInvalidArgument, "empty test manifest");
    if (!truth_.fully_labeled()) throw Error(ErrorCode::kInvalidArgument, "test manifest has unlabelled items");
    if (truth_.count(Label::kPositive) == 0 || truth_.count(Label::kNegative) == 0) {
      throw Error(ErrorCode::kUndefinedMetric, "test manifest must contain both classes");
    }
    if (!opt_.clock) opt_.clock = system_clock_seconds;
    auto state = std::make_shared<ChallengeState>();
    std::vector<nlohmann::json> events;
    if (!opt_.data_dir.empty()) {
      std::filesystem::create_directories(opt_.data_dir);
      events = read_log(log_path());
    }
    if (events.empty()) {
      nlohmann::json create = {{"type", "create"},
                               {"n_test", truth_.size()},
                               {"preview_fraction", opt_.preview_fraction},
                               {"seed", opt_.seed},
                               {"manifest_digest", manifest_digest()},
                               {"preview", choose_preview(truth_, opt_.preview_fraction, opt_.seed)}};
      apply(*state, create);
      append(create);
    } else {
      const auto& c = events.front();
      if (c.value("type", "") != "create") throw Error(ErrorCode::kFormat, "event log does not start with create");
      if (c.at("manifest_digest").get<std::string>() != manifest_digest()) {
        throw Error(ErrorCode::kConfigMismatch, "event log was written for a different test manifest");
      }
      if (c.at("preview_fraction").get<double>() != opt_.preview_fraction ||
          c.at("seed").get<std::uint64_t>() != opt_.seed) {
        throw Error(ErrorCode::kConfigMismatch, "event log preview_fraction/seed differ from configuration");
      }
      for (const auto& e : events) apply(*state, e);
      log_ = std::move(events);
    }
    current_ = std::move(state);
  }

  std::shared_ptr<const ChallengeState> snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return current_;
  }

  const DatasetManifest& truth() const { return truth_; }
  const ServiceOptions& options() const { return opt_; }
  std::filesystem::path log_path() const { return opt_.data_dir / kLogName; }
  const std::vector<nlohmann::json>& events() const { return log_; }

  TeamRecord register_team(const std::string& name) {
    if (name.empty() || name.size() > 64) throw Error(ErrorCode::kValidation, "team name must be 1-64 characters");
    if (std::any_of(name.begin(), name.end(), [](unsigned char c) { return c < 0x20 || c == 0x7f; })) {
      throw Error(ErrorCode::kValidation, "team name contains control characters");
    }
    std::lock_guard lock(write_mutex_);
    auto next = std::make_shared<ChallengeState>(*snapshot());
    for (const auto& t : next->teams) {
      if (t.name == name) throw Error(ErrorCode::kValidation, "team name already registered: " + name);
    }
    char id[32];
    std::snprintf(id, sizeof id, "team-%03zu", next->teams.size() + 1);
    nlohmann::json e = {{"type", "team"}, {"team_id", id}, {"name", name}, {"token", new_token()}};
    apply(*next, e);
    append(e);
    publish(next);
    return next->teams.back();
  }

  SubmitResult submit(std::string_view token, std::string_view csv_body) {
    const auto* team = snapshot()->team_by_token(token);
    if (!team) throw Error(ErrorCode::kUnauthorized, "invalid or missing team token");
    const std::string team_id = team->team_id;
    if (snapshot()->phase != Phase::kOpen) throw Error(ErrorCode::kPhase, "challenge is closed");
    auto sub = validate_submission(csv_body, truth_);

    std::lock_guard lock(write_mutex_);
    auto next = std::make_shared<ChallengeState>(*snapshot());
    if (next->phase != Phase::kOpen) throw Error(ErrorCode::kPhase, "challenge is closed");
    const std::int64_t now = opt_.clock();
    const auto* t = next->team_by_id(team_id);
    if (t->last_submission_day && *t->last_submission_day == utc_day(now)) {
      throw Error(ErrorCode::kRateLimited, "one submission per team per UTC day; next window opens " +
                                               format_utc((utc_day(now) + 1) * 86400));
    }
    char id[32];
    std::snprintf(id, sizeof id, "sub-%04zu", next->submissions.size() + 1);
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& e : sub.entries()) preds.push_back({e.item_id, e.score});
    nlohmann::json e = {{"type", "submission"},
                        {"submission_id", id},
                        {"team_id", team_id},
                        {"timestamp", now},
                        {"utc", format_utc(now)},
                        {"predictions", std::move(preds)}};
    apply(*next, e);
    append(e);
    publish(next);
    const auto& rec = next->submissions.back();
    return {rec.submission_id, rec.team_id, rec.timestamp, rec.preview_auc};
  }

  /// Idempotent; releases final scores and full reports.
  void close() {
    std::lock_guard lock(write_mutex_);
    auto cur = snapshot();
    if (cur->phase == Phase::kClosed) return;
    auto next = std::make_shared<ChallengeState>(*cur);
    const std::int64_t now = opt_.clock();
    nlohmann::json e = {{"type", "close"}, {"timestamp", now}, {"utc", format_utc(now)}};
    apply(*next, e);
    append(e);
    publish(next);
  }

  std::vector<PreviewEntry> preview_leaderboard() const {
    const auto s = snapshot();
    std::vector<PreviewEntry> out;
    for (const auto& t : s->teams) {
      PreviewEntry p{t.team_id, t.name, std::nullopt, 0, {}};
      for (const auto& r : s->submissions) {
        if (r.team_id != t.team_id) continue;
        p.timeline.push_back({r.submission_id, r.timestamp, r.preview_auc});
        ++p.n_submissions;
        if (r.preview_auc && (!p.best_preview_auc || *r.preview_auc > *p.best_preview_auc)) {
          p.best_preview_auc = r.preview_auc;
        }
      }
      if (p.n_submissions > 0) out.push_back(std::move(p));
    }
    std::stable_sort(out.begin(), out.end(), [](const PreviewEntry& a, const PreviewEntry& b) {
      return a.best_preview_auc.value_or(-1.0) > b.best_preview_auc.value_or(-1.0);
    });
    return out;
  }

  std::vector<FinalEntry> final_leaderboard() const {
    const auto s = snapshot();
    if (s->phase != Phase::kClosed) throw Error(ErrorCode::kPhase, "final leaderboard is available after close");
    std::vector<FinalEntry> out;
    for (const auto& t : s->teams) {
      const SubmissionRecord* best = nullptr;
      std::size_t n = 0;
      for (const auto& r : s->submissions) {
        if (r.team_id != t.team_id) continue;
        ++n;
        if (!best || r.final_auc > best->final_auc) best = &r;
      }
      if (!best) continue;
      out.push_back({t.team_id, t.name, best->submission_id, best->final_auc, best->report->bootstrap.lo,
                     best->report->bootstrap.hi, n});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const FinalEntry& a, const FinalEntry& b) { return a.final_auc > b.final_auc; });
    return out;
  }

 private:
  std::string manifest_digest() const {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(format_manifest(truth_))));
    return buf;
  }

  static std::string new_token() {
    std::random_device rd;
    static constexpr char kHex[] = "0123456789abcdef";
    std::string t;
    for (int i = 0; i < 8; ++i) {
      std::uint32_t v = rd();
      for (int j = 0; j < 4; ++j, v >>= 8) {
        t += kHex[(v >> 4) & 0xf];
        t += kHex[v & 0xf];
      }
    }
    return t;
  }

  static std::vector<nlohmann::json> read_log(const std::filesystem::path& path) {
    std::vector<nlohmann::json> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        out.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::kFormat, path.string() + ": corrupt event at line " + std::to_string(line_no));
      }
    }
    return out;
  }

  void append(const nlohmann::json& e) {
    if (!opt_.data_dir.empty()) {
      std::ofstream out(log_path(), std::ios::app | std::ios::binary);
      if (!out) throw Error(ErrorCode::kIo, "cannot append to " + log_path().string());
      out << e.dump() << '\n';
      out.flush();
      if (!out) throw Error(ErrorCode::kIo, "write failed for " + log_path().string());
    }
    log_.push_back(e);
  }

  void publish(std::shared_ptr<const ChallengeState> next) {
    std::lock_guard lock(snapshot_mutex_);
    current_ = std::move(next);
  }

  std::optional<double> preview_auc(const SubmissionSet& sub, const std::vector<std::string>& preview) const {
    std::vector<double> s;
    std::vector<int> l;
    s.reserve(preview.size());
    l.reserve(preview.size());
    for (const auto& id : preview) {
      s.push_back(sub.at(id));
      l.push_back(truth_.at(id).label == Label::kPositive ? 1 : 0);
    }
    const auto pos = std::count(l.begin(), l.end(), 1);
    if (pos == 0 || static_cast<std::size_t>(pos) == l.size()) return std::nullopt;
    return auc(s, l);
  }

  void release(ChallengeState& s, std::size_t i) const {
    auto& r = s.submissions[i];
    EvalOptions eo;
    eo.n_boot = opt_.n_boot;
    eo.seed = derive_seed(s.seed, "final", i);
    r.report = std::make_shared<const EvalReport>(evaluate(*r.predictions, truth_, eo));
  }

  void apply(ChallengeState& s, const nlohmann::json& e) const {
    const std::string type = e.at("type").get<std::string>();
    if (type == "create") {
      s.n_test = e.at("n_test").get<std::size_t>();
      s.preview_fraction = e.at("preview_fraction").get<double>();
      s.seed = e.at("seed").get<std::uint64_t>();
      s.preview_ids = e.at("preview").get<std::vector<std::string>>();
    } else if (type == "team") {
      s.teams.push_back({e.at("team_id").get<std::string>(), e.at("name").get<std::string>(),
                         e.at("token").get<std::string>(), std::nullopt, 0});
    } else if (type == "submission") {
      auto sub = std::make_shared<SubmissionSet>();
      for (const auto& p : e.at("predictions")) sub->add(p.at(0).get<std::string>(), p.at(1).get<double>());
      SubmissionRecord r;
      r.submission_id = e.at("submission_id").get<std::string>();
      r.team_id = e.at("team_id").get<std::string>();
      r.timestamp = e.at("timestamp").get<std::int64_t>();
      sub->team = r.team_id;
      sub->timestamp = format_utc(r.timestamp);
      r.preview_auc = preview_auc(*sub, s.preview_ids);
      r.final_auc = auc(*sub, truth_);
      r.predictions = std::move(sub);
      auto it = std::find_if(s.teams.begin(), s.teams.end(), [&](const TeamRecord& t) { return t.team_id == r.team_id; });
      if (it == s.teams.end()) throw Error(ErrorCode::kFormat, "submission for unknown team " + r.team_id);
      it->last_submission_day = utc_day(r.timestamp);
      ++it->n_submissions;
      s.submissions.push_back(std::move(r));
      if (s.phase == Phase::kClosed) release(s, s.submissions.size() - 1);
    } else if (type == "close") {
      s.phase = Phase::kClosed;
      s.closed_at = e.at("timestamp").get<std::int64_t>();
      for (std::size_t i = 0; i < s.submissions.size(); ++i) release(s, i);
    } else {
      throw Error(ErrorCode::kFormat, "unknown event type " + type);
    }
  }

  DatasetManifest truth_;
  ServiceOptions opt_;
  std::vector<nlohmann::json> log_;
  mutable std::mutex snapshot_mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const ChallengeState> current_;
};

}  // namespace avibench
