#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "avibench/detector.hpp"

using namespace avibench;

namespace {

Matrix gaussian_blob(int n, int dim, double center, double sd, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> d(center, sd);
  Matrix m(n, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(g);
  return m;
}

struct Toy {
  std::vector<FeatureFrames> feats;
  std::vector<int> labels;
};

Toy toy_mfcc(int n, std::uint64_t seed) {
  Toy t;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    t.feats.push_back({gaussian_blob(30, 13, y ? 1.0 : -1.0, 1.0, seed + static_cast<std::uint64_t>(i)), FeatureKind::kMfcc});
    t.labels.push_back(y);
  }
  return t;
}

Toy toy_logmel(int n, std::uint64_t seed) {
  Toy t;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    Matrix m = gaussian_blob(40, 32, -5.0, 0.5, seed + static_cast<std::uint64_t>(i));
    if (y) {
      for (int r = 10; r < 20; ++r) m.block(r, 12, 1, 4).array() += 4.0;
    }
    t.feats.push_back({m, FeatureKind::kLogMel});
    t.labels.push_back(y);
  }
  return t;
}

DetectorConfig small_forest() {
  auto c = DetectorConfig::forest_default();
  c.dictionary.k1 = 10;
  c.dictionary.k2 = 8;
  c.dictionary.max_iter = 20;
  c.forest.n_trees = 25;
  return c;
}

std::string forest_bytes(const RandomForest& f) {
  BinaryWriter w;
  f.save(w);
  return w.data();
}

}  // namespace

TEST(Gmm, SingleComponentMatchesClosedForm) {
  const Matrix x = gaussian_blob(500, 4, 2.0, 3.0, 1);
  GmmFitOptions opt;
  opt.n_components = 1;
  const auto r = gmm_fit_one(x, opt, 7);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  EXPECT_TRUE(r.model.means.row(0).isApprox(mean, 1e-12));
  EXPECT_TRUE(r.model.vars.row(0).isApprox(var, 1e-12));
  EXPECT_DOUBLE_EQ(r.model.weights(0), 1.0);

  double ll = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int d = 0; d < 4; ++d) {
      const double z = x(i, d) - mean(d);
      ll += -0.5 * std::log(2 * std::numbers::pi * var(d)) - z * z / (2 * var(d));
    }
  }
  EXPECT_NEAR(r.model.log_likelihood(x).mean(), ll / static_cast<double>(x.rows()), 1e-9);
}

TEST(Gmm, RecoversTwoSeparatedClustersWithMonotoneTrace) {
  Matrix x(4000, 2);
  x.topRows(2000) = gaussian_blob(2000, 2, -5.0, 1.0, 2);
  x.bottomRows(2000) = gaussian_blob(2000, 2, 5.0, 1.0, 3);
  GmmFitOptions opt;
  opt.n_components = 2;
  const auto r = gmm_fit_one(x, opt, 11);
  for (int c = 0; c < 2; ++c) {
    const double target = r.model.means(c, 0) < 0 ? -5.0 : 5.0;
    EXPECT_NEAR(r.model.means(c, 0), target, 0.1);
    EXPECT_NEAR(r.model.means(c, 1), target, 0.1);
  }
  EXPECT_NEAR(r.model.weights(0), 0.5, 0.02);
  for (std::size_t i = 1; i < r.log_likelihood_trace.size(); ++i) {
    EXPECT_GE(r.log_likelihood_trace[i], r.log_likelihood_trace[i - 1] - 1e-12);
  }
  EXPECT_THROW(gmm_fit_one(x.topRows(1), opt, 1), Error);
}

TEST(Gmm, ConstantDataFallsBackToOneComponent) {
  const Matrix x = Matrix::Constant(50, 3, 1.5);
  const auto r = gmm_fit_one(x, GmmFitOptions{}, 1);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.model.n_components(), 1);
  EXPECT_TRUE(r.model.log_likelihood(x).allFinite());
}

TEST(Gmm, IdenticalModelsScoreOneHalf) {
  const auto fit = gmm_fit_one(gaussian_blob(200, 5, 0.0, 1.0, 5), GmmFitOptions{}, 3).model;
  GmmPair pair{fit, fit, 1.0, 1e-6};
  EXPECT_DOUBLE_EQ(gmm_score(pair, gaussian_blob(20, 5, 3.0, 2.0, 6)), 0.5);
  EXPECT_THROW(gmm_score(pair, Matrix(0, 5)), Error);
  EXPECT_THROW(gmm_score(pair, Matrix::Zero(3, 4)), Error);
}

TEST(Gmm, ScoresOwnClassAboveHalfAndTemperatureSharpens) {
  const Matrix pos = gaussian_blob(400, 3, 1.0, 1.0, 8);
  const Matrix neg = gaussian_blob(400, 3, -1.0, 1.0, 9);
  GmmFitOptions opt;
  opt.n_components = 2;
  auto fit = gmm_fit(pos, neg, opt, 4);
  EXPECT_GT(gmm_score(fit.model, pos), 0.5);
  EXPECT_LT(gmm_score(fit.model, neg), 0.5);
  const double warm = gmm_score(fit.model, pos);
  fit.model.temperature = 0.2;
  EXPECT_GT(gmm_score(fit.model, pos), warm);
}

TEST(Gmm, ScoreStaysInUnitIntervalUnderFuzzing) {
  GmmFitOptions opt;
  opt.n_components = 3;
  const auto fit = gmm_fit(gaussian_blob(300, 4, 0.5, 1.0, 20), gaussian_blob(300, 4, -0.5, 2.0, 21), opt, 2);
  std::mt19937_64 g(22);
  std::uniform_real_distribution<double> mag(-8, 8);
  for (int t = 0; t < 300; ++t) {
    const double scale = std::pow(10.0, mag(g));
    const Matrix x = gaussian_blob(1 + t % 7, 4, mag(g), scale, 100 + static_cast<std::uint64_t>(t));
    for (double temp : {0.01, 1.0, 100.0}) {
      GmmPair m = fit.model;
      m.temperature = temp;
      const double s = gmm_score(m, x);
      ASSERT_GE(s, 0.0);
      ASSERT_LE(s, 1.0);
    }
  }
}

TEST(Forest, SeparatesBlobsAndIgnoresThreadCount) {
  Matrix x(200, 6);
  x.topRows(100) = gaussian_blob(100, 6, -2.0, 1.0, 12);
  x.bottomRows(100) = gaussian_blob(100, 6, 2.0, 1.0, 13);
  std::vector<int> y(200, 0);
  std::fill(y.begin() + 100, y.end(), 1);
  ForestOptions opt;
  opt.n_trees = 40;
  const auto f1 = rf_fit(x, y, opt, 99);
  int correct = 0;
  for (int i = 0; i < 200; ++i) {
    const double s = rf_score(f1, x.row(i).transpose());
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, 1.0);
    correct += (s > 0.5) == (y[static_cast<std::size_t>(i)] == 1);
  }
  EXPECT_GE(correct / 200.0, 0.99);

  opt.threads = 3;
  EXPECT_EQ(forest_bytes(rf_fit(x, y, opt, 99)), forest_bytes(f1));
  EXPECT_NE(forest_bytes(rf_fit(x, y, opt, 100)), forest_bytes(f1));
}

TEST(Forest, SingleTreeScoreIsLeafFraction) {
  Matrix x(6, 1);
  x << 0, 1, 2, 10, 11, 12;
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  ForestOptions opt;
  opt.n_trees = 1;
  const auto f = rf_fit(x, y, opt, 3);
  ASSERT_EQ(f.trees().size(), 1u);
  const auto& t = f.trees()[0];
  for (int i = 0; i < 6; ++i) {
    const std::vector<double> v = {x(i, 0)};
    const auto& leaf = t.nodes()[t.leaf_of(v)];
    EXPECT_EQ(f.score(std::span<const double>(v)), leaf.positive_fraction);
  }
  EXPECT_THROW(rf_fit(x, std::vector<int>(6, 1), opt, 1), Error);
  EXPECT_THROW(rf_fit(x, {0, 1}, opt, 1), Error);
}

TEST(Forest, PureLeavesAgreementAndFuzzing) {
  Matrix x(8, 2);
  x << 0, 0, 1, 0, 0, 1, 1, 1, 10, 10, 11, 10, 10, 11, 11, 11;
  const std::vector<int> y = {0, 0, 0, 0, 1, 1, 1, 1};
  ForestOptions opt;
  opt.n_trees = 15;
  opt.mtry = 2;
  const auto f = rf_fit(x, y, opt, 4);
  for (const auto& t : f.trees()) {
    for (int i = 4; i < 8; ++i) {
      const std::vector<double> v = {x(i, 0), x(i, 1)};
      EXPECT_EQ(t.score(v), 1.0);
    }
  }
  EXPECT_EQ(f.score(std::vector<double>{10.5, 10.5}), 1.0);
  EXPECT_EQ(f.score(std::vector<double>{0.5, 0.5}), 0.0);

  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> d(-1e6, 1e6);
  for (int t = 0; t < 1000; ++t) {
    const double s = f.score(std::vector<double>{d(g), d(g)});
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, 1.0);
  }
}

TEST(Augment, ShiftNoiseAndCounts) {
  AudioClip c{"c", {1, 2, 3, 4, 5}, 8000};
  EXPECT_EQ(time_shift(c, 0).samples, c.samples);
  EXPECT_EQ(time_shift(c, 2).samples, (std::vector<double>{4, 5, 1, 2, 3}));
  EXPECT_EQ(time_shift(c, 5).samples, c.samples);

  std::vector<double> s(20000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.3 * std::sin(0.05 * static_cast<double>(i));
  AudioClip tone{"t", s, 8000};
  Rng rng(5);
  const auto noisy = noise_mix(tone, 40.0, rng);
  std::vector<double> diff(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) diff[i] = noisy.samples[i] - s[i];
  EXPECT_NEAR(rms(diff) / rms(s), 0.01, 1e-9);

  std::vector<AudioClip> clips;
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) {
    clips.push_back({"c" + std::to_string(i), std::vector<double>(400, 0.1 * (i % 7 + 1)), 8000});
    labels.push_back(i % 2);
  }
  AugmentConfig cfg;
  cfg.factor = 3;
  const auto out = augment(clips, labels, cfg, 1);
  EXPECT_EQ(out.clips.size(), 300u);
  EXPECT_EQ(std::count(out.labels.begin(), out.labels.end(), 1), 150);
  EXPECT_EQ(out.clips[100].id, "c0_aug1");
  const auto again = augment(clips, labels, cfg, 1);
  EXPECT_EQ(again.clips[250].samples, out.clips[250].samples);
  cfg.factor = 1;
  EXPECT_EQ(augment(clips, labels, cfg, 1).clips.size(), 100u);
  cfg.factor = 0;
  EXPECT_THROW(augment(clips, labels, cfg, 1), Error);
}

TEST(Detector, GmmModelRoundTripsBitExactly) {
  const auto t = toy_mfcc(20, 30);
  const auto m = train_detector(DetectorConfig::gmm_default(), t.feats, t.labels, 17);
  const std::string bytes = encode_model(m);
  EXPECT_EQ(bytes.substr(0, 4), "AVBM");
  const auto back = decode_model(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
  EXPECT_EQ(encode_model(back), bytes);
  for (const auto& f : t.feats) EXPECT_EQ(back.score(f), m.score(f));

  std::string bad = bytes;
  bad[30] ^= 0x01;
  EXPECT_THROW(decode_model(std::span(reinterpret_cast<const unsigned char*>(bad.data()), bad.size())), Error);
  bad = bytes + "x";
  EXPECT_THROW(decode_model(std::span(reinterpret_cast<const unsigned char*>(bad.data()), bad.size())), Error);
}

TEST(Detector, RefusesFeaturesFromAnotherFrontEnd) {
  const auto t = toy_mfcc(10, 40);
  const auto m = train_detector(DetectorConfig::gmm_default(), t.feats, t.labels, 1);
  CachedFeatures cf{t.feats[0], m.feature_hash()};
  EXPECT_NO_THROW(m.score(cf));
  cf.config_hash ^= 1;
  try {
    m.score(cf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigMismatch);
  }
  EXPECT_THROW(m.score(FeatureFrames{Matrix::Zero(5, 32), FeatureKind::kLogMel}), Error);
  EXPECT_THROW(train_detector(DetectorConfig::gmm_default(), t.feats, std::vector<int>(10, 0), 1), Error);
}

TEST(Detector, ForestModelSeparatesToyDataAndRoundTrips) {
  const auto t = toy_logmel(30, 50);
  const auto m = train_detector(small_forest(), t.feats, t.labels, 23);
  int correct = 0;
  for (std::size_t i = 0; i < t.feats.size(); ++i) {
    const double s = m.score(t.feats[i]);
    correct += (s > 0.5) == (t.labels[i] == 1);
  }
  EXPECT_GE(correct, 28);
  const std::string bytes = encode_model(m);
  const auto back = decode_model(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
  EXPECT_EQ(encode_model(back), bytes);
  EXPECT_EQ(back.score(t.feats[3]), m.score(t.feats[3]));
}

TEST(Adapt, PseudoLabelSelectionOrderAndCaps) {
  AdaptationConfig cfg;
  cfg.max_added = 2;
  const std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f"};
  const std::vector<double> scores = {0.95, 0.05, 0.95, 0.5, 0.99, 0.0};
  const auto sel = select_pseudo_labels(ids, scores, cfg);
  ASSERT_EQ(sel.size(), 4u);
  EXPECT_EQ(sel[0].item_id, "e");
  EXPECT_EQ(sel[1].item_id, "a");
  EXPECT_EQ(sel[2].item_id, "f");
  EXPECT_EQ(sel[3].item_id, "b");
  EXPECT_EQ(sel[3].label, 0);
  cfg.low_threshold = 0.9;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Adapt, EmptyPoolOrSelectionLeavesModelUnchanged) {
  const auto t = toy_mfcc(20, 60);
  const auto m = train_detector(DetectorConfig::gmm_default(), t.feats, t.labels, 2);
  const auto r0 = self_adapt(m, t.feats, t.labels, {}, {}, AdaptationConfig{});
  EXPECT_EQ(encode_model(r0.model), encode_model(m));
  EXPECT_TRUE(r0.rounds.empty());

  AdaptationConfig strict;
  strict.low_threshold = 0.0;
  strict.high_threshold = 1.0;
  std::vector<FeatureFrames> pool = {{Matrix::Zero(10, 13), FeatureKind::kMfcc}};
  const auto r1 = self_adapt(m, t.feats, t.labels, {"p0"}, pool, strict);
  if (m.score(pool[0]) > 0.0 && m.score(pool[0]) < 1.0) {
    EXPECT_EQ(encode_model(r1.model), encode_model(m));
    EXPECT_TRUE(r1.rounds.empty());
  }

  const auto r2 = self_adapt(m, t.feats, t.labels, {"a", "b", "c", "d"},
                             {t.feats[0], t.feats[1], t.feats[2], t.feats[3]}, AdaptationConfig{});
  ASSERT_EQ(r2.rounds.size(), 1u);
  EXPECT_EQ(r2.rounds[0].added_positive + r2.rounds[0].added_negative, r2.last_selection.size());
  EXPECT_NE(encode_model(r2.model), encode_model(m));
}
