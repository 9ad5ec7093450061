#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "avibench/metrics.hpp"
#include "avibench/report.hpp"

using namespace avibench;

namespace {

double pair_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[i] != 1 || l[j] != 0) continue;
      den += 1;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

DatasetManifest truth_of(const std::vector<int>& labels, const std::vector<std::string>& sites = {}) {
  DatasetManifest m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m.add({"i" + std::to_string(i), labels[i] ? Label::kPositive : Label::kNegative,
           sites.empty() ? std::nullopt : std::optional<std::string>(sites[i]), "a/" + std::to_string(i) + ".wav"});
  }
  return m;
}

SubmissionSet sub_of(const std::vector<double>& scores) {
  SubmissionSet s;
  for (std::size_t i = 0; i < scores.size(); ++i) s.add("i" + std::to_string(i), scores[i]);
  return s;
}

}  // namespace

TEST(Auc, HandWorkedExample) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auc(s, l), 0.75);
  const std::vector<double> flipped = {0.9, 0.6, 0.65, 0.2};
  EXPECT_DOUBLE_EQ(auc(flipped, l), 0.25);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>(9, 0.3), std::vector<int>{0, 1, 1, 0, 0, 1, 0, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.1, 0.2, 0.7, 0.9}, l), 1.0);
}

TEST(Auc, MatchesPairEnumerationWithTies) {
  std::mt19937 g(42);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + static_cast<int>(g() % 60);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(g() % 7) / 6.0;
      l[static_cast<std::size_t>(i)] = static_cast<int>(g() % 2);
    }
    l[0] = 0;
    l[1] = 1;
    ASSERT_NEAR(auc(s, l), pair_auc(s, l), 1e-12);
    std::vector<double> c(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) c[i] = 1.0 - s[i];
    ASSERT_NEAR(auc(c, l), 1.0 - auc(s, l), 1e-12);
    const auto roc = roc_points(s, l);
    ASSERT_NEAR(roc.trapezoid_area(), auc(s, l), 1e-12);
    ASSERT_EQ(roc.points.front().fpr, 0.0);
    ASSERT_EQ(roc.points.front().tpr, 0.0);
    ASSERT_EQ(roc.points.back().fpr, 1.0);
    ASSERT_EQ(roc.points.back().tpr, 1.0);
  }
}

TEST(Auc, SingleClassIsUndefined) {
  try {
    auc(std::vector<double>{0.2, 0.3}, std::vector<int>{1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUndefinedMetric);
  }
}

TEST(Auc, InterRaterTenItems) {
  const std::vector<int> a = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  const std::vector<int> b = {1, 1, 1, 0, 0, 0, 0, 0, 0, 1};
  EXPECT_NEAR(interrater_auc(a, b), 19.0 / 24.0, 1e-12);
  EXPECT_DOUBLE_EQ(interrater_auc(a, a), 1.0);
  std::vector<int> inv(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) inv[i] = 1 - a[i];
  EXPECT_DOUBLE_EQ(interrater_auc(inv, a), 0.0);
}

TEST(Roc, VerticesForDistinctThresholds) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l = {0, 0, 1, 1};
  const auto roc = roc_points(s, l);
  ASSERT_EQ(roc.points.size(), 5u);
  EXPECT_DOUBLE_EQ(roc.points[1].tpr, 0.5);
  EXPECT_DOUBLE_EQ(roc.points[1].fpr, 0.0);
  EXPECT_DOUBLE_EQ(roc.points[1].threshold, 0.8);
  EXPECT_DOUBLE_EQ(roc.points[2].fpr, 0.5);
  EXPECT_DOUBLE_EQ(roc.points[3].tpr, 1.0);
  EXPECT_DOUBLE_EQ(roc.trapezoid_area(), 0.75);
}

TEST(Roc, PerfectSeparationAndAllTied) {
  const std::vector<int> l = {0, 0, 1, 1, 1};
  const auto perfect = roc_points(std::vector<double>{0.1, 0.2, 0.6, 0.7, 0.8}, l);
  EXPECT_TRUE(std::any_of(perfect.points.begin(), perfect.points.end(),
                          [](const RocPoint& p) { return p.fpr == 0.0 && p.tpr == 1.0; }));
  EXPECT_DOUBLE_EQ(perfect.trapezoid_area(), 1.0);
  const auto tied = roc_points(std::vector<double>(5, 0.4), l);
  ASSERT_EQ(tied.points.size(), 2u);
  EXPECT_EQ(tied.points[1].fpr, 1.0);
  EXPECT_EQ(tied.points[1].tpr, 1.0);
  EXPECT_DOUBLE_EQ(tied.trapezoid_area(), 0.5);
}

TEST(Bootstrap, PerfectSeparationHasTightInterval) {
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 1000; ++i) {
    l.push_back(i % 2);
    s.push_back(l.back() ? 0.6 + 0.0004 * i / 2 : 0.4 - 0.0004 * i / 2);
  }
  const auto b = bootstrap_auc(s, l, 200, 4);
  EXPECT_DOUBLE_EQ(b.point, 1.0);
  EXPECT_GT(b.lo, 0.99);
}

TEST(Bootstrap, FourItemsAgreeWithExhaustiveEnumeration) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l = {0, 0, 1, 1};
  std::map<double, double> exact;
  double valid = 0;
  for (int code = 0; code < 256; ++code) {
    std::vector<double> rs;
    std::vector<int> rl;
    for (int k = 0, c = code; k < 4; ++k, c /= 4) {
      rs.push_back(s[static_cast<std::size_t>(c % 4)]);
      rl.push_back(l[static_cast<std::size_t>(c % 4)]);
    }
    const auto np = std::count(rl.begin(), rl.end(), 1);
    if (np == 0 || np == 4) continue;
    valid += 1;
    exact[pair_auc(rs, rl)] += 1;
  }
  double exact_mean = 0;
  for (auto& [v, c] : exact) {
    c /= valid;
    exact_mean += v * c;
  }
  const auto b = bootstrap_auc(s, l, 20000, 3);
  EXPECT_DOUBLE_EQ(b.point, 0.75);
  double mean = 0;
  std::map<double, double> seen;
  for (double r : b.replicates) {
    mean += r;
    seen[r] += 1;
  }
  mean /= static_cast<double>(b.replicates.size());
  EXPECT_NEAR(mean, exact_mean, 0.01);
  for (const auto& [v, c] : seen) {
    ASSERT_TRUE(exact.contains(v)) << v;
    EXPECT_NEAR(c / 20000.0, exact.at(v), 0.015) << v;
  }
  EXPECT_NEAR(static_cast<double>(b.redrawn) / (20000.0 + static_cast<double>(b.redrawn)), 2.0 * 16 / 256, 0.01);
  EXPECT_LE(b.lo, b.hi);
  const auto again = bootstrap_auc(s, l, 20000, 3);
  EXPECT_EQ(again.replicates, b.replicates);
  EXPECT_THROW(bootstrap_auc(s, l, 0, 1), Error);
}

TEST(Bootstrap, IntervalCoversPointOnLargeSample) {
  std::mt19937 g(8);
  std::normal_distribution<double> d;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 400; ++i) {
    l.push_back(i % 3 == 0);
    s.push_back(1.0 / (1.0 + std::exp(-(d(g) + (l.back() ? 1.0 : 0.0)))));
  }
  const auto b = bootstrap_auc(s, l, 500, 1);
  EXPECT_LT(b.lo, b.point);
  EXPECT_GT(b.hi, b.point);
  EXPECT_LT(b.hi - b.lo, 0.2);
}

TEST(PerSite, SingleSiteMeanEqualsPooledAndSingleClassSitesExcluded) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8, 0.2, 0.9};
  const auto one = per_site_auc(sub_of(s), truth_of({0, 0, 1, 1, 0, 1}, {"x", "x", "x", "x", "x", "x"}));
  EXPECT_DOUBLE_EQ(one.mean, one.pooled);

  const auto two = per_site_auc(sub_of(s), truth_of({0, 0, 1, 1, 1, 1}, {"x", "x", "x", "x", "y", "y"}));
  ASSERT_EQ(two.excluded_sites, std::vector<std::string>{"y"});
  EXPECT_DOUBLE_EQ(two.mean, 0.75);
  EXPECT_DOUBLE_EQ(two.site_auc.at("x"), 0.75);

  EXPECT_THROW(per_site_auc(sub_of(s), truth_of({0, 0, 1, 1, 0, 1})), Error);
}

TEST(PerSite, IdenticalSitesGiveMeanNearPooled) {
  std::mt19937 g(31);
  std::normal_distribution<double> d;
  DatasetManifest truth;
  SubmissionSet sub;
  for (int i = 0; i < 2000; ++i) {
    const bool pos = g() % 3 == 0;
    const std::string id = "p" + std::to_string(i);
    truth.add({id, pos ? Label::kPositive : Label::kNegative, i % 2 ? "east" : "west", id + ".wav"});
    sub.add(id, 1.0 / (1.0 + std::exp(-(d(g) + (pos ? 1.0 : 0.0)))));
  }
  const auto r = per_site_auc(sub, truth);
  EXPECT_EQ(r.site_auc.size(), 2u);
  EXPECT_LT(std::abs(r.mean - r.pooled), 0.02);
}

TEST(PerSite, PooledVsMeanRSquared) {
  EXPECT_NEAR(pearson_r2(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 1.0, 1e-12);
  EXPECT_NEAR(pearson_r2(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, -1, -1, 1}), 0.0, 1e-12);
  const auto truth = truth_of({0, 1, 0, 1, 0, 1, 0, 1}, {"a", "a", "a", "a", "b", "b", "b", "b"});
  std::vector<SubmissionSet> subs = {sub_of({0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6}),
                                     sub_of({0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4}),
                                     sub_of({0.5, 0.6, 0.7, 0.2, 0.3, 0.7, 0.4, 0.6})};
  std::vector<double> pooled, mean;
  for (const auto& s : subs) {
    const auto r = per_site_auc(s, truth);
    pooled.push_back(r.pooled);
    mean.push_back(r.mean);
  }
  EXPECT_NEAR(pooled_vs_mean_r2(subs, truth), pearson_r2(pooled, mean), 1e-12);
}

TEST(Calibration, BinsAndAnchor) {
  std::vector<double> s(8, 0.75);
  std::vector<int> l = {1, 1, 1, 0, 1, 1, 1, 0};
  const auto t = calibration_table(s, l, 10);
  ASSERT_EQ(t.bins.size(), 10u);
  EXPECT_EQ(t.bins[7].count, 8u);
  EXPECT_DOUBLE_EQ(*t.bins[7].mean_predicted, 0.75);
  EXPECT_DOUBLE_EQ(*t.bins[7].empirical_rate, 0.75);
  EXPECT_FALSE(t.bins[0].mean_predicted.has_value());
  EXPECT_DOUBLE_EQ(t.max_deviation(), 0.0);

  const auto edge = calibration_table(std::vector<double>{0.0, 1.0, 0.1}, std::vector<int>{0, 1, 0}, 10);
  EXPECT_EQ(edge.bins[0].count, 1u);
  EXPECT_EQ(edge.bins[1].count, 1u);
  EXPECT_EQ(edge.bins[9].count, 1u);
}

TEST(Calibration, BernoulliScoresStayWithinBinomialBound) {
  std::mt19937_64 g(17);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(100000);
  std::vector<int> l(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(g);
    l[i] = u(g) < s[i] ? 1 : 0;
  }
  const auto t = calibration_table(s, l, 10);
  for (const auto& b : t.bins) {
    ASSERT_GT(b.count, 0u);
    const double p = *b.mean_predicted;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(b.count));
    EXPECT_LT(std::abs(*b.empirical_rate - p), 3 * sigma + 1e-3);
  }
}

TEST(Platt, NearIdentityOnCalibratedScoresAndRejectsOneClass) {
  std::mt19937_64 g(19);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(50000);
  std::vector<int> l(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(g);
    l[i] = u(g) < s[i] ? 1 : 0;
  }
  const auto p = platt_fit(s, l);
  for (double x = 0.1; x <= 0.9 + 1e-12; x += 0.05) EXPECT_NEAR(p.apply(x), x, 0.05) << x;
  EXPECT_THROW(platt_fit(std::vector<double>{0.2, 0.4}, std::vector<int>{1, 1}), Error);
}

TEST(Platt, StationaryPointOfSmoothedLogLoss) {
  std::mt19937 g(13);
  std::normal_distribution<double> d;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 300; ++i) {
    l.push_back(i % 2);
    s.push_back(std::clamp(0.5 + 0.15 * (d(g) + (l.back() ? 0.8 : -0.8)), 0.0, 1.0));
  }
  const auto p = platt_fit(s, l);
  const double np = 150, nn = 150;
  double ga = 0, gb = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double t = l[i] ? (np + 1) / (np + 2) : 1 / (nn + 2);
    const double q = 1.0 / (1.0 + std::exp(p.a * s[i] + p.b));
    ga += (t - q) * s[i];
    gb += (t - q);
  }
  EXPECT_NEAR(ga, 0.0, 1e-6);
  EXPECT_NEAR(gb, 0.0, 1e-6);
  EXPECT_LT(p.a, 0.0);
  EXPECT_GT(p.apply(0.9), p.apply(0.1));
  EXPECT_NEAR(p.apply(-p.b / p.a), 0.5, 1e-12);

  std::vector<double> mapped;
  for (double v : s) mapped.push_back(p.apply(v));
  EXPECT_DOUBLE_EQ(auc(mapped, l), auc(s, l));
}

TEST(RankPca, IdenticalRankingsCollapseAndMonotoneMapsAreInvisible) {
  const std::vector<double> base = {0.1, 0.5, 0.3, 0.9, 0.7};
  std::vector<double> squared;
  for (double v : base) squared.push_back(v * v);
  const auto same = rank_pca({sub_of(base), sub_of(squared), sub_of(base)});
  EXPECT_LT(same.cwiseAbs().maxCoeff(), 1e-9);

  const std::vector<double> reversed = {0.9, 0.5, 0.7, 0.1, 0.3};
  const auto c = rank_pca({sub_of(base), sub_of(base), sub_of(reversed)});
  ASSERT_EQ(c.rows(), 3);
  ASSERT_EQ(c.cols(), 2);
  EXPECT_NEAR(c(0, 0), c(1, 0), 1e-9);
  EXPECT_NEAR(c(0, 0), -c(2, 0) / 2, 1e-9);
  EXPECT_GT(c(2, 0), 0.0);
  EXPECT_LT(c.col(1).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(rank_pca({sub_of(base), sub_of(base)}), Error);
}

TEST(RankPca, OrthogonalRankVectorsAreEquidistant) {
  const int n = 7;
  std::vector<std::vector<double>> perms;
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  do {
    std::vector<double> c(n);
    for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(i)] - (n - 1) / 2.0;
    perms.push_back(c);
  } while (std::next_permutation(p.begin(), p.end()));
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  };
  std::vector<std::vector<double>> ortho;
  for (const auto& q : perms) {
    if (dot(q, perms.front()) == 0) ortho.push_back(q);
  }
  std::vector<std::vector<double>> chosen;
  for (std::size_t a = 0; a < ortho.size() && chosen.empty(); ++a) {
    for (std::size_t b = a + 1; b < ortho.size() && chosen.empty(); ++b) {
      if (dot(ortho[a], ortho[b]) == 0) chosen = {perms.front(), ortho[a], ortho[b]};
    }
  }
  ASSERT_EQ(chosen.size(), 3u);
  std::vector<SubmissionSet> subs;
  for (const auto& c : chosen) {
    std::vector<double> scores;
    for (double v : c) scores.push_back((v + 3.0) / 6.0);
    subs.push_back(sub_of(scores));
  }
  const Matrix coords = rank_pca(subs);
  const double d01 = (coords.row(0) - coords.row(1)).norm();
  const double d02 = (coords.row(0) - coords.row(2)).norm();
  const double d12 = (coords.row(1) - coords.row(2)).norm();
  EXPECT_NEAR(d01, d02, 1e-9);
  EXPECT_NEAR(d01, d12, 1e-9);
  EXPECT_NEAR(d01, std::sqrt(2 * 28.0), 1e-9);
}

TEST(Ensemble, MeanOfSubmissions) {
  const auto m = ensemble_mean({sub_of({0.2, 0.4}), sub_of({0.6, 0.0})});
  EXPECT_DOUBLE_EQ(m.at("i0"), 0.4);
  EXPECT_DOUBLE_EQ(m.at("i1"), 0.2);
  EXPECT_THROW(ensemble_mean({sub_of({0.2, 0.4}), sub_of({0.6})}), Error);
  const auto same = ensemble_mean({sub_of({0.3, 0.8}), sub_of({0.3, 0.8})});
  EXPECT_DOUBLE_EQ(same.at("i0"), 0.3);
  EXPECT_DOUBLE_EQ(same.at("i1"), 0.8);
  EXPECT_DOUBLE_EQ(ensemble_mean({sub_of({0.0}), sub_of({1.0})}).at("i0"), 0.5);
}

TEST(Revalidation, FlagsDisagreeingLabelsByDeviation) {
  const auto truth = truth_of({0, 0, 1, 1, 0, 1});
  const auto flagged = revalidation_candidates(sub_of({0.1, 0.25, 0.29, 0.9, 0.95, 0.05}), truth, 0.2, 0.3);
  ASSERT_EQ(flagged.size(), 4u);
  EXPECT_EQ(flagged[0].item_id, "i4");
  EXPECT_EQ(flagged[1].item_id, "i5");
  EXPECT_EQ(flagged[2].item_id, "i2");
  EXPECT_EQ(flagged[3].item_id, "i1");
  EXPECT_NEAR(flagged[0].deviation, 0.95, 1e-12);

  const auto rule = revalidation_candidates(sub_of({0.25, 0.29, 0.5}), truth_of({0, 1, 1}), 0.2, 0.3);
  ASSERT_EQ(rule.size(), 2u);
  EXPECT_EQ(rule[0].item_id, "i1");
  EXPECT_EQ(rule[1].item_id, "i0");
}

TEST(Mismatch, OrderingAndAnnotationSheet) {
  const auto truth = truth_of({1, 0, 1, 0, 1});
  const auto top = top_mismatched(sub_of({0.2, 0.7, 0.9, 0.3, 0.2}), truth, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].item_id, "i0");
  EXPECT_EQ(top[1].item_id, "i4");
  EXPECT_EQ(top[2].item_id, "i1");
  const std::string sheet = format_annotation_sheet(top);
  std::istringstream in(sheet);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(split_csv_line(line).size(), 6 + error_categories().size());
  EXPECT_EQ(error_categories().size(), 11u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("1,i0,1,0.200000,0.800000,false-negative", 0), 0u);
  EXPECT_EQ(split_csv_line(line).size(), 6 + error_categories().size());

  EXPECT_EQ(top_mismatched(sub_of({0.2, 0.7, 0.9, 0.3, 0.2}), truth, 50).size(), 5u);
  const auto perfect = top_mismatched(sub_of({1, 0, 1, 0, 1}), truth, 5);
  for (std::size_t i = 0; i < perfect.size(); ++i) {
    EXPECT_EQ(perfect[i].deviation, 0.0);
    EXPECT_EQ(perfect[i].item_id, "i" + std::to_string(i));
  }
}

TEST(Report, EvaluateAssemblesAllParts) {
  const auto truth = truth_of({0, 0, 1, 1}, {"s", "s", "t", "t"});
  const auto r = evaluate(sub_of({0.1, 0.4, 0.35, 0.8}), truth, {200, 5, 10});
  EXPECT_EQ(r.n_items, 4u);
  EXPECT_EQ(r.n_positive, 2u);
  EXPECT_DOUBLE_EQ(r.auc, 0.75);
  ASSERT_TRUE(r.per_site.has_value());
  EXPECT_EQ(r.per_site->excluded_sites.size(), 2u);
  EXPECT_TRUE(std::isnan(r.per_site->mean));
  const auto j = to_json(r);
  EXPECT_DOUBLE_EQ(j.at("auc").get<double>(), 0.75);
  EXPECT_EQ(roc_csv(r.roc).rfind("fpr,tpr,threshold\n", 0), 0u);
}
