// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// the number of failures. Pass criterion numbers as arguments to run a subset.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <thread>

#include "avibench/http.hpp"
#include "avibench/pipeline.hpp"

#ifndef AVIBENCH_CLI_PATH
#define AVIBENCH_CLI_PATH "avibench"
#endif

using namespace avibench;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double pair_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != 0) continue;
      den += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

// Scores on a coarse grid so ties occur; both classes guaranteed.
void random_instance(Rng& rng, std::size_t n, std::vector<double>& s, std::vector<int>& l) {
  const std::size_t levels = 2 + rng.index(40);
  s.resize(n);
  l.resize(n);
  const double shift = rng.uniform(0.0, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    l[i] = rng.uniform() < 0.4 ? 1 : 0;
    const double raw = std::clamp(rng.uniform() + (l[i] ? shift : 0.0), 0.0, 1.0);
    s[i] = std::floor(raw * static_cast<double>(levels)) / static_cast<double>(levels);
  }
  l[0] = 0;
  l[1] = 1;
}

Outcome auc_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(kSeed, "c1"));
  double worst = 0;
  std::vector<double> s;
  std::vector<int> l;
  for (int k = 0; k < 500; ++k) {
    random_instance(rng, 2 + rng.index(199), s, l);
    worst = std::max(worst, std::abs(auc(s, l) - pair_auc(s, l)));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-12 && t < 10.0, fmt("max |midrank - pairs| = %.3g over 500 sets, %.2f s", worst, t)};
}

Outcome monotone_invariance() {
  Rng rng(derive_seed(kSeed, "c2"));
  std::vector<double> s;
  std::vector<int> l;
  random_instance(rng, 300, s, l);
  const double base = auc(s, l);
  std::vector<std::function<double(double)>> maps;
  for (int k = 0; k < 20; ++k) {
    const double a = rng.uniform(0.5, 5.0), b = rng.uniform(-2.0, 2.0);
    switch (k % 5) {
      case 0: maps.push_back([=](double x) { return a * x + b; }); break;
      case 1: maps.push_back([=](double x) { return std::exp(a * x); }); break;
      case 2: maps.push_back([=](double x) { return std::log1p(a * x); }); break;
      case 3: maps.push_back([=](double x) { return 1.0 / (1.0 + std::exp(-a * (x - 0.5) - b)); }); break;
      case 4: maps.push_back([=](double x) { return std::pow(x, a) + b * 1e-3; }); break;
    }
  }
  int exact = 0;
  for (const auto& f : maps) {
    std::vector<double> t(s.size());
    std::transform(s.begin(), s.end(), t.begin(), f);
    exact += auc(t, l) == base ? 1 : 0;
  }
  return {exact == 20, fmt("%d/20 transforms give AUC identical to %.6f", exact, base)};
}

Outcome chance_level() {
  Rng rng(derive_seed(kSeed, "c3"));
  std::vector<double> s(10000);
  std::vector<int> l(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform();
    l[i] = rng.uniform() < 0.5 ? 1 : 0;
  }
  const auto b = bootstrap_auc(s, l, 1000, derive_seed(kSeed, "c3-boot"));
  const bool ok = b.point >= 0.48 && b.point <= 0.52 && b.lo <= 0.5 && b.hi >= 0.5;
  return {ok, fmt("AUC %.4f, 95%% CI [%.4f, %.4f]", b.point, b.lo, b.hi)};
}

Outcome roc_consistency() {
  Rng rng(derive_seed(kSeed, "c4"));
  double worst = 0;
  std::vector<double> s;
  std::vector<int> l;
  for (int k = 0; k < 1000; ++k) {
    random_instance(rng, 2 + rng.index(300), s, l);
    worst = std::max(worst, std::abs(roc_points(s, l).trapezoid_area() - auc(s, l)));
  }
  return {worst <= 1e-12, fmt("max |trapezoid - rank AUC| = %.3g over 1000 sets", worst)};
}

Outcome matched_baseline() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = DetectorConfig::forest_default();
  const auto profile = site_a_profile();
  const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const double clip_len = 5.0;
  const auto train = synth_feature_dataset(profile, 2000, derive_seed(kSeed, "siteA/train"), clip_len, cfg.frontend,
                                           "siteA-train", threads);
  const auto test = synth_feature_dataset(profile, 1000, derive_seed(kSeed, "siteA/test"), clip_len, cfg.frontend,
                                          "siteA-test", threads);
  auto dcfg = cfg;
  dcfg.forest.threads = threads;
  const auto model = train_on(train, dcfg, derive_seed(kSeed, "train"));
  const double a = auc(predict(model, test, threads), test.truth());
  const double t = seconds_since(t0);
  return {a >= 0.85 && t < 600, fmt("forest detector, siteA 2000/1000 clips of %.0f s: AUC %.4f in %.0f s", clip_len, a, t)};
}

Outcome mismatch_degradation() {
  PipelineConfig cfg;
  cfg.seed = kSeed;
  cfg.clip_len_s = 5.0;
  cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto g = synthetic_crossgrid_stage({site_a_profile(), site_b_profile()}, 200, 200, cfg);
  const auto& m = g.at("auc");
  const double aa = m[0][0], ab = m[0][1], ba = m[1][0], bb = m[1][1];
  // Each test column: the model trained on that site beats the one trained elsewhere.
  const bool ok = aa - ba >= 0.05 && bb - ab >= 0.05;
  return {ok, fmt("gmm grid train\\test AA %.3f AB %.3f BA %.3f BB %.3f; gaps A %.3f B %.3f", aa, ab, ba, bb,
                  aa - ba, bb - ab)};
}

Outcome adaptation_direction() {
  ShiftBenchmarkConfig cfg;
  cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int holds = 0;
  std::string detail;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const auto r = run_shift_benchmark(site_a_profile(), site_b_profile(), cfg, s);
    const bool ok = r.mismatched_after > r.mismatched_before && r.matched_after <= r.matched_before + 0.01;
    holds += ok ? 1 : 0;
    detail += fmt("%sseed %d: mismatched %.4f->%.4f matched %.4f->%.4f %s", s > 1 ? "; " : "", static_cast<int>(s),
                  r.mismatched_before, r.mismatched_after, r.matched_before, r.matched_after, ok ? "ok" : "no");
  }
  return {holds >= 2, fmt("%d/3 seeds hold (", holds) + detail + ")"};
}

Outcome em_monotone() {
  double worst = 0;
  std::size_t iters = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(kSeed, "c8", seed));
    const int dim = 2 + static_cast<int>(rng.index(6));
    Matrix x(400, dim);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double c = static_cast<double>(rng.index(3)) * 2.5;
      for (int d = 0; d < dim; ++d) x(i, d) = c + rng.normal() * rng.uniform(0.3, 1.5);
    }
    GmmFitOptions opt;
    opt.n_components = 1 + static_cast<int>(rng.index(6));
    opt.tol = 0;
    opt.max_iter = 60;
    const auto r = gmm_fit_one(x, opt, seed);
    for (std::size_t i = 1; i < r.log_likelihood_trace.size(); ++i) {
      worst = std::max(worst, r.log_likelihood_trace[i - 1] - r.log_likelihood_trace[i]);
    }
    iters += r.log_likelihood_trace.size();
  }
  return {worst <= 1e-9, fmt("largest per-iteration decrease %.3g over 100 fits (%zu E-steps)", worst, iters)};
}

Outcome platt_scaling() {
  Rng rng(derive_seed(kSeed, "c9"));
  std::vector<double> reported(20000);
  std::vector<int> l(20000);
  for (std::size_t i = 0; i < reported.size(); ++i) {
    const double p = rng.uniform();
    l[i] = rng.uniform() < p ? 1 : 0;
    reported[i] = p * p;
  }
  const auto params = platt_fit(reported, l);
  std::vector<double> fixed(reported.size());
  for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] = params.apply(reported[i]);
  const double before = calibration_table(reported, l).max_deviation(30);
  const double after = calibration_table(fixed, l).max_deviation(30);
  const double da = std::abs(auc(fixed, l) - auc(reported, l));
  return {after < before && da <= 1e-12,
          fmt("max bin deviation %.4f -> %.4f, |dAUC| %.3g", before, after, da)};
}

Outcome calibration_anchor() {
  std::vector<double> s(400, 0.75);
  std::vector<int> l(400, 0);
  std::fill(l.begin(), l.begin() + 300, 1);
  const auto t = calibration_table(s, l);
  const auto& bin = t.bins[7];
  const bool ok = bin.count == 400 && bin.empirical_rate && *bin.empirical_rate == 0.75;
  return {ok, fmt("bin [%.1f, %.1f): %zu items, empirical rate %.17g", bin.lo, bin.hi, bin.count,
                  bin.empirical_rate.value_or(-1))};
}

Outcome revalidation_rule() {
  DatasetManifest truth;
  const std::vector<std::pair<std::string, int>> items = {{"r1", 0}, {"r2", 0}, {"r3", 0}, {"r4", 0},
                                                          {"r5", 1}, {"r6", 1}, {"r7", 1}, {"r8", 1}};
  for (const auto& [id, y] : items) truth.add({id, y ? Label::kPositive : Label::kNegative, std::nullopt, id + ".wav"});
  // Mean decisions: r1 .10 r2 .20 r3 .21 r4 .90 | r5 .29 r6 .30 r7 .95 r8 .05
  const std::vector<std::vector<double>> per_sub = {{0.05, 0.10, 0.21, 0.80, 0.29, 0.20, 0.90, 0.00},
                                                    {0.15, 0.30, 0.21, 1.00, 0.29, 0.40, 1.00, 0.10}};
  std::vector<SubmissionSet> subs(2);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t i = 0; i < items.size(); ++i) subs[s].add(items[i].first, per_sub[s][i]);
  }
  const auto flagged = revalidation_candidates(ensemble_mean(subs), truth, 0.2, 0.3);
  std::set<std::string> got;
  for (const auto& f : flagged) got.insert(f.item_id);
  const std::set<std::string> expected = {"r3", "r4", "r5", "r8"};
  std::string ids;
  for (const auto& f : flagged) ids += (ids.empty() ? "" : ",") + f.item_id;
  return {got == expected && flagged.size() == expected.size(), "flagged " + ids + " (expected r3,r4,r5,r8)"};
}

Outcome service_mechanics() {
  DatasetManifest truth;
  for (int i = 0; i < 1000; ++i) {
    const std::string id = "item" + std::to_string(i);
    truth.add({id, i % 4 == 0 ? Label::kPositive : Label::kNegative, "s", id + ".wav"});
  }
  Rng rng(derive_seed(kSeed, "c12"));
  std::string csv = "itemid,prediction\n";
  for (const auto& it : truth.items()) {
    const double v = std::clamp((it.label == Label::kPositive ? 0.6 : 0.4) + rng.uniform(-0.4, 0.4), 0.0, 1.0);
    csv += it.item_id + "," + fmt("%.6f", v) + "\n";
  }
  auto now = std::make_shared<std::atomic<std::int64_t>>(1'750'000'000);
  const auto dir = fs::temp_directory_path() / "avibench_acceptance_service";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ServiceOptions opt;
  opt.seed = kSeed;
  opt.data_dir = dir;
  opt.clock = [now] { return now->load(); };
  opt.n_boot = 200;
  std::vector<std::string> problems;
  auto check = [&](bool c, const std::string& what) {
    if (!c) problems.push_back(what);
  };
  nlohmann::json digest;
  {
    ChallengeService svc(truth, opt);
    check(svc.snapshot()->preview_ids.size() == 150, "preview size");
    const auto team = svc.register_team("t1");
    const auto first = svc.submit(team.token, csv);
    int status = 0;
    try {
      ApiRequest req{"POST", "/api/submissions", {}, "Bearer " + team.token, csv};
      status = handle_request(svc, req).status;
    } catch (...) {
    }
    check(status == 429, "same-day resubmission status " + std::to_string(status));
    *now += 86400;
    const auto second = svc.submit(team.token, csv);
    check(first.preview_auc == second.preview_auc, "preview AUC changed on identical resubmission");

    const auto racer = svc.register_team("t2");
    std::atomic<int> accepted{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 10; ++i) {
      threads.emplace_back([&] {
        try {
          svc.submit(racer.token, csv);
          ++accepted;
        } catch (const Error&) {
        }
      });
    }
    for (auto& t : threads) t.join();
    check(accepted == 1, "concurrent submissions admitted " + std::to_string(accepted.load()));

    const double final_auc = svc.snapshot()->submissions[0].final_auc;
    const std::string final_text = nlohmann::json(final_auc).dump();
    for (const auto& [method, path, query] :
         std::vector<std::tuple<std::string, std::string, std::map<std::string, std::string>>>{
             {"GET", "/api/leaderboard", {}},
             {"GET", "/api/leaderboard", {{"mode", "preview"}}},
             {"GET", "/api/leaderboard", {{"mode", "final"}}},
             {"GET", "/api/challenge", {}},
             {"GET", "/api/submissions/sub-0001", {}}}) {
      const auto r = handle_request(svc, {method, path, query, "Bearer " + team.token, ""});
      check(r.body.find("final_auc") == std::string::npos && r.body.find(final_text) == std::string::npos,
            "open-phase response leaks final AUC: " + path);
    }
    digest = state_digest(*svc.snapshot());
  }
  {
    ChallengeService replay(truth, opt);
    check(state_digest(*replay.snapshot()) == digest, "replayed state differs");
  }
  fs::remove_all(dir);
  std::string detail = "429 on same-day resubmission, preview 150/1000, stable preview AUC, replay identical, "
                       "no final AUC while open, 1/10 concurrent admitted";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

int run_cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + AVIBENCH_CLI_PATH + "' " + args + " > /dev/null";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome end_to_end_determinism() {
  const std::vector<std::string> steps = {
      "--seed 5 synth --profile siteA --n 40 --clip-len 2 --out train",
      "--seed 6 synth --profile siteA --n 30 --clip-len 2 --prefix test --out test",
      "--seed 5 featurize --manifest train/manifest.csv --out train_feat",
      "--seed 5 featurize --manifest test/manifest.csv --out test_feat",
      "--seed 5 train --features train_feat --out model.bin",
      "--seed 5 predict --model model.bin --features test_feat --out sub.csv",
      "--seed 5 evaluate --sub sub.csv --truth test/manifest.csv --out report.json"};
  std::vector<std::string> reports;
  std::vector<std::string> models;
  for (int run = 0; run < 2; ++run) {
    const auto dir = fs::temp_directory_path() / ("avibench_acceptance_e2e" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& s : steps) {
      if (run_cli(dir, s) != 0) return {false, "command failed: avibench " + s};
    }
    auto doc = nlohmann::json::parse(slurp(dir / "report.json"));
    doc.erase("provenance");
    reports.push_back(doc.dump());
    models.push_back(slurp(dir / "model.bin") + slurp(dir / "sub.csv"));
    fs::remove_all(dir);
  }
  const bool ok = reports[0] == reports[1] && models[0] == models[1];
  return {ok, fmt("two CLI runs: reports %s (%zu bytes), model and submission %s", reports[0] == reports[1] ? "identical" : "differ",
                  reports[0].size(), models[0] == models[1] ? "identical" : "differ")};
}

Outcome bootstrap_behaviour() {
  auto sample = [](Rng& rng, std::size_t n, std::vector<double>& s, std::vector<int>& l) {
    s.resize(n);
    l.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = rng.uniform() < 0.3 ? 1 : 0;
      s[i] = 1.0 / (1.0 + std::exp(-(rng.normal() + (l[i] ? 1.2 : 0.0))));
    }
  };
  std::vector<double> s;
  std::vector<int> l;
  int covered = 0;
  for (std::uint64_t t = 0; t < 200; ++t) {
    Rng rng(derive_seed(kSeed, "c14-cover", t));
    sample(rng, 300, s, l);
    const auto b = bootstrap_auc(s, l, 500, derive_seed(kSeed, "c14-boot", t));
    covered += b.lo <= b.point && b.point <= b.hi ? 1 : 0;
  }
  auto median_width = [&](std::size_t n) {
    std::vector<double> w;
    for (std::uint64_t t = 0; t < 21; ++t) {
      Rng rng(derive_seed(kSeed, "c14-width-" + std::to_string(n), t));
      sample(rng, n, s, l);
      const auto b = bootstrap_auc(s, l, 500, t);
      w.push_back(b.hi - b.lo);
    }
    std::nth_element(w.begin(), w.begin() + 10, w.end());
    return w[10];
  };
  const double w1 = median_width(1000), w4 = median_width(4000);
  const bool ok = covered >= 190 && w4 <= 0.65 * w1;
  return {ok, fmt("CI contains point in %d/200 trials; median width n=1000 %.4f, n=4000 %.4f (ratio %.3f)", covered, w1,
                  w4, w4 / w1)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"AUC oracle equivalence", auc_oracle},
      {"monotone invariance", monotone_invariance},
      {"chance level", chance_level},
      {"ROC consistency", roc_consistency},
      {"matched-conditions baseline", matched_baseline},
      {"mismatch degradation", mismatch_degradation},
      {"self-adaptation direction", adaptation_direction},
      {"EM monotonicity", em_monotone},
      {"Platt scaling", platt_scaling},
      {"calibration anchor", calibration_anchor},
      {"re-validation rule", revalidation_rule},
      {"service mechanics", service_mechanics},
      {"end-to-end determinism", end_to_end_determinism},
      {"bootstrap behaviour", bootstrap_behaviour},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
