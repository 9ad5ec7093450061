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

// Diagonal-covariance Gaussian mixtures fitted by EM, and the two-model
// (bird / no-bird) frame-likelihood detector built on them.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "avibench/binary_io.hpp"
#include "avibench/common.hpp"
#include "avibench/features.hpp"
#include "avibench/rng.hpp"

namespace avibench {

struct DiagGmm {
  Vector weights;  // k
  Matrix means;    // k x d
  Matrix vars;     // k x d

  int n_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  // n x k matrix of log(w_k) + log N(x_i | mu_k, var_k).
  Matrix weighted_log_densities(const Matrix& x) const {
    const Matrix inv = vars.cwiseInverse();
    const Vector log_norm = (vars.array() * (2.0 * std::numbers::pi)).log().rowwise().sum();
    const Vector mu_term = (means.array().square() * inv.array()).rowwise().sum();
    Matrix out = x.array().square().matrix() * inv.transpose();
    out -= 2.0 * x * (means.array() * inv.array()).matrix().transpose();
    out.rowwise() += (mu_term + log_norm).transpose();
    out *= -0.5;
    out.rowwise() += weights.array().log().matrix().transpose();
    return out;
  }

  /// Per-row log p(x).
  Vector log_likelihood(const Matrix& x) const {
    const Matrix lp = weighted_log_densities(x);
    Vector out(lp.rows());
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
      const double m = lp.row(i).maxCoeff();
      out(i) = m + std::log((lp.row(i).array() - m).exp().sum());
    }
    return out;
  }

  void save(BinaryWriter& w) const {
    w.vector(weights);
    w.matrix(means);
    w.matrix(vars);
  }
  static DiagGmm load(BinaryReader& r) {
    DiagGmm g;
    g.weights = r.vector();
    g.means = r.matrix();
    g.vars = r.matrix();
    return g;
  }
};

struct GmmFitOptions {
  int n_components = 8;
  int max_iter = 100;
  double tol = 1e-6;         // stop when mean per-frame log-likelihood gains less
  double var_floor = 1e-6;
};

struct GmmFitResult {
  DiagGmm model;
  std::vector<double> log_likelihood_trace;  // mean per-frame, one per E-step
  bool degenerate = false;                   // single-component fallback used
};

namespace detail {

inline Matrix kmeans_pp_centers(const Matrix& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  Vector d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    } else {
      double target = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        target -= d2(pick);
        if (target < 0.0) break;
      }
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// EM for a diagonal GMM. Initial means come from k-means++ seeding, variances
/// from the pooled data. Every variance is floored in the M-step, which is the
/// exact constrained maximiser, so the log-likelihood trace never decreases.
inline GmmFitResult gmm_fit_one(const Matrix& x, const GmmFitOptions& opt, std::uint64_t seed) {
  if (opt.n_components <= 0) throw Error(ErrorCode::kInvalidArgument, "n_components must be positive");
  if (x.rows() < opt.n_components) {
    throw Error(ErrorCode::kInsufficientData, "fewer frames than mixture components");
  }
  const Eigen::Index n = x.rows();
  const Vector mean = x.colwise().mean().transpose();
  const Vector var =
      (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose().cwiseMax(opt.var_floor);

  GmmFitResult res;
  const bool all_identical = ((x.rowwise() - x.row(0)).cwiseAbs().maxCoeff() == 0.0);
  int k = opt.n_components;
  if (all_identical) {
    k = 1;
    res.degenerate = true;
  }
  Rng rng(seed);
  DiagGmm& g = res.model;
  g.weights = Vector::Constant(k, 1.0 / k);
  g.means = k == 1 ? Matrix(mean.transpose()) : detail::kmeans_pp_centers(x, k, rng);
  g.vars = var.transpose().replicate(k, 1);

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    Matrix resp = g.weighted_log_densities(x);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = resp.row(i).maxCoeff();
      resp.row(i) = (resp.row(i).array() - m).exp();
      const double s = resp.row(i).sum();
      resp.row(i) /= s;
      ll += m + std::log(s);
    }
    ll /= static_cast<double>(n);
    res.log_likelihood_trace.push_back(ll);
    const auto& tr = res.log_likelihood_trace;
    if (tr.size() > 1 && tr[tr.size() - 1] - tr[tr.size() - 2] < opt.tol) break;

    const Vector nk = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      g.weights(c) = nk(c) / static_cast<double>(n);
      if (nk(c) < 1e-10) continue;  // starved component keeps its parameters
      const Vector r = resp.col(c);
      const Eigen::RowVectorXd mu = (r.transpose() * x) / nk(c);
      g.means.row(c) = mu;
      const Eigen::RowVectorXd s2 =
          (r.transpose() * (x.rowwise() - mu).array().square().matrix()) / nk(c);
      g.vars.row(c) = s2.cwiseMax(opt.var_floor);
    }
  }
  return res;
}

/// Bird / no-bird mixture pair scored by mean frame log-likelihood ratio.
struct GmmPair {
  DiagGmm positive;
  DiagGmm negative;
  double temperature = 1.0;
  double var_floor = 1e-6;
};

struct GmmPairFit {
  GmmPair model;
  GmmFitResult positive;
  GmmFitResult negative;
};

inline GmmPairFit gmm_fit(const Matrix& positive_frames, const Matrix& negative_frames,
                          const GmmFitOptions& opt, std::uint64_t seed, double temperature = 1.0) {
  GmmPairFit out;
  out.positive = gmm_fit_one(positive_frames, opt, derive_seed(seed, "gmm-positive"));
  out.negative = gmm_fit_one(negative_frames, opt, derive_seed(seed, "gmm-negative"));
  out.model = {out.positive.model, out.negative.model, temperature, opt.var_floor};
  return out;
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double gmm_score(const GmmPair& model, const Matrix& clip_frames) {
  if (clip_frames.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "empty frame set");
  if (clip_frames.cols() != model.positive.dim()) {
    throw Error(ErrorCode::kInvalidArgument, "frame dimension does not match model");
  }
  const Vector diff = model.positive.log_likelihood(clip_frames) - model.negative.log_likelihood(clip_frames);
  double llr = diff.mean();
  if (std::isnan(llr)) llr = 0.0;
  return logistic(llr / model.temperature);
}

}  // namespace avibench
