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

// Two-layer unsupervised feature learning over log-mel spectrograms.
//
// Layer 1 learns a dictionary of PCA-whitened spectro-temporal patches with
// spherical k-means. Layer-1 responses are max-pooled in time by a factor of
// two, stacked into short windows and clustered again for layer 2. A clip is
// summarised by max- and mean-pooling both layers' rectified cosine responses
// over the whole clip.

#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "avibench/binary_io.hpp"
#include "avibench/common.hpp"
#include "avibench/features.hpp"
#include "avibench/rng.hpp"

namespace avibench {

struct DictionaryConfig {
  int patch_width = 4;        // layer-1 patch length in frames
  int k1 = 100;
  int k2 = 100;
  int pool_factor = 2;        // temporal max-pool between layers
  int layer2_width = 2;       // layer-2 patch length in pooled frames
  int max_iter = 50;
  std::size_t max_patches = 20000;  // per layer, subsampled for fitting
  double whiten_eps = 0.01;   // relative to the mean patch eigenvalue
  bool band_median_norm = true;

  bool operator==(const DictionaryConfig&) const = default;
};

struct SphericalKMeansResult {
  Matrix centroids;                 // k x dim, unit rows
  std::vector<double> objective;    // sum of max cosine similarity, per iteration
  int iterations = 0;
  bool converged = false;           // reached an assignment fixpoint
};

/// Spherical k-means on rows of `data`, which must already be unit-norm (or
/// zero). Centroids start at k distinct random rows.
inline SphericalKMeansResult spherical_kmeans(const Matrix& data, int k, int max_iter,
                                              std::uint64_t seed) {
  if (k <= 0) throw Error(ErrorCode::kInvalidArgument, "k must be positive");
  const auto n = static_cast<std::size_t>(data.rows());
  if (n < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::kInsufficientData, "fewer data rows than centroids");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first k entries are a uniform sample.
  for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
    std::swap(order[i], order[i + rng.index(n - i)]);
  }
  SphericalKMeansResult res;
  res.centroids.resize(k, data.cols());
  for (int j = 0; j < k; ++j) {
    res.centroids.row(j) = data.row(static_cast<Eigen::Index>(order[static_cast<std::size_t>(j)]));
    const double norm = res.centroids.row(j).norm();
    if (norm > 0) {
      res.centroids.row(j) /= norm;
    } else {
      res.centroids.row(j).setZero();
      res.centroids(j, j % data.cols()) = 1.0;
    }
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Matrix sim = data * res.centroids.transpose();
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best;
      objective += sim.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      if (assign[i] != static_cast<int>(best)) {
        assign[i] = static_cast<int>(best);
        changed = true;
      }
    }
    res.objective.push_back(objective);
    res.iterations = iter + 1;
    if (!changed) {
      res.converged = true;
      break;
    }
    Matrix sums = Matrix::Zero(k, data.cols());
    for (std::size_t i = 0; i < n; ++i) sums.row(assign[i]) += data.row(static_cast<Eigen::Index>(i));
    for (int j = 0; j < k; ++j) {
      const double norm = sums.row(j).norm();
      if (norm > 0) res.centroids.row(j) = sums.row(j) / norm;  // empty cluster keeps its centroid
    }
  }
  return res;
}

/// PCA whitening: y = W (x - mean) with W = diag(1/sqrt(lambda + eps)) V^T.
struct Whitening {
  Vector mean;
  Matrix transform;  // dim x dim

  Matrix apply(const Matrix& rows) const {
    return (rows.rowwise() - mean.transpose()) * transform.transpose();
  }
};

inline Whitening fit_whitening(const Matrix& rows, double relative_eps) {
  if (rows.rows() < 2) throw Error(ErrorCode::kInsufficientData, "need at least two patches");
  Whitening w;
  w.mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - w.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(rows.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector lambda = eig.eigenvalues().cwiseMax(0.0);
  const double eps = std::max(relative_eps * lambda.mean(), 1e-12);
  w.transform = (lambda.array() + eps).rsqrt().matrix().asDiagonal() *
                eig.eigenvectors().transpose();
  return w;
}

/// Normalizes each row to unit L2 norm; zero rows stay zero.
inline void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (norm > 0) m.row(r) /= norm;
  }
}

struct FeatureDictionary {
  DictionaryConfig config;
  int n_mels = 0;
  Whitening whitening;
  Matrix layer1_centroids;  // k1 x (n_mels * patch_width)
  Matrix layer2_centroids;  // k2 x (k1 * layer2_width)
  std::vector<double> layer1_objective;
  std::vector<double> layer2_objective;

  int summary_dim() const { return 2 * (config.k1 + config.k2); }

  void save(BinaryWriter& w) const {
    w.i32(config.patch_width);
    w.i32(config.k1);
    w.i32(config.k2);
    w.i32(config.pool_factor);
    w.i32(config.layer2_width);
    w.i32(config.max_iter);
    w.u64(config.max_patches);
    w.f64(config.whiten_eps);
    w.u32(config.band_median_norm ? 1 : 0);
    w.i32(n_mels);
    w.vector(whitening.mean);
    w.matrix(whitening.transform);
    w.matrix(layer1_centroids);
    w.matrix(layer2_centroids);
  }

  static FeatureDictionary load(BinaryReader& r) {
    FeatureDictionary d;
    d.config.patch_width = r.i32();
    d.config.k1 = r.i32();
    d.config.k2 = r.i32();
    d.config.pool_factor = r.i32();
    d.config.layer2_width = r.i32();
    d.config.max_iter = r.i32();
    d.config.max_patches = r.u64();
    d.config.whiten_eps = r.f64();
    d.config.band_median_norm = r.u32() != 0;
    d.n_mels = r.i32();
    d.whitening.mean = r.vector();
    d.whitening.transform = r.matrix();
    d.layer1_centroids = r.matrix();
    d.layer2_centroids = r.matrix();
    return d;
  }
};

namespace detail {

// Subtracts each band's median over the clip (log domain), a per-recording
// noise-floor estimate.
inline Matrix band_median_normalize(const Matrix& logmel) {
  Matrix out = logmel;
  std::vector<double> col(static_cast<std::size_t>(logmel.rows()));
  for (Eigen::Index c = 0; c < logmel.cols(); ++c) {
    for (Eigen::Index r = 0; r < logmel.rows(); ++r) col[static_cast<std::size_t>(r)] = logmel(r, c);
    auto mid = col.begin() + static_cast<std::ptrdiff_t>(col.size() / 2);
    std::nth_element(col.begin(), mid, col.end());
    out.col(c).array() -= *mid;
  }
  return out;
}

// Row t holds frames [t, t + width) flattened frame-major.
inline Matrix stack_windows(const Matrix& frames, int width) {
  const Eigen::Index n = frames.rows() - width + 1;
  if (n <= 0) return Matrix(0, frames.cols() * width);
  Matrix out(n, frames.cols() * width);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int w = 0; w < width; ++w) {
      out.block(t, w * frames.cols(), 1, frames.cols()) = frames.row(t + w);
    }
  }
  return out;
}

inline Matrix max_pool_time(const Matrix& rows, int factor) {
  const Eigen::Index n = rows.rows() / factor;
  Matrix out(n, rows.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    out.row(t) = rows.block(t * factor, 0, factor, rows.cols()).colwise().maxCoeff();
  }
  return out;
}

inline std::vector<bool> degenerate_rows(const Matrix& rows) {
  std::vector<bool> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    out[static_cast<std::size_t>(r)] = rows.row(r).maxCoeff() - rows.row(r).minCoeff() < 1e-12;
  }
  return out;
}

inline Matrix subsample_rows(const Matrix& rows, std::size_t max_rows, std::uint64_t seed) {
  if (static_cast<std::size_t>(rows.rows()) <= max_rows) return rows;
  Rng rng(seed);
  std::vector<std::size_t> idx(static_cast<std::size_t>(rows.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < max_rows; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  Matrix out(static_cast<Eigen::Index>(max_rows), rows.cols());
  for (std::size_t i = 0; i < max_rows; ++i) out.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline Matrix concat_rows(const std::vector<Matrix>& parts, Eigen::Index cols) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.rows();
  Matrix out(total, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

}  // namespace detail

/// Rectified cosine responses of already-whitened, unit-norm rows.
inline Matrix rectified_responses(const Matrix& unit_rows, const Matrix& centroids) {
  return (unit_rows * centroids.transpose()).cwiseMax(0.0);
}

/// Layer-1 input: whitened unit patches; degenerate (constant) patches map to zero rows.
inline Matrix layer1_patches(const Matrix& logmel, const FeatureDictionary& dict) {
  const Matrix frames = dict.config.band_median_norm ? detail::band_median_normalize(logmel) : logmel;
  const Matrix raw = detail::stack_windows(frames, dict.config.patch_width);
  if (raw.rows() == 0) return raw;
  const auto degenerate = detail::degenerate_rows(raw);
  Matrix white = dict.whitening.apply(raw);
  normalize_rows(white);
  for (Eigen::Index r = 0; r < white.rows(); ++r) {
    if (degenerate[static_cast<std::size_t>(r)]) white.row(r).setZero();
  }
  return white;
}

inline Matrix layer2_patches(const Matrix& layer1_resp, const DictionaryConfig& cfg) {
  Matrix pooled = detail::max_pool_time(layer1_resp, cfg.pool_factor);
  Matrix stacked = detail::stack_windows(pooled, cfg.layer2_width);
  normalize_rows(stacked);
  return stacked;
}

/// Temporal summary: per-column max followed by per-column mean. An empty
/// response matrix pools to zeros.
inline Vector temporal_pool(const Matrix& responses) {
  Vector out = Vector::Zero(2 * responses.cols());
  if (responses.rows() == 0) return out;
  out.head(responses.cols()) = responses.colwise().maxCoeff().transpose();
  out.tail(responses.cols()) = responses.colwise().mean().transpose();
  return out;
}

inline FeatureDictionary learn_dictionary(const std::vector<FeatureFrames>& melspecs,
                                          const DictionaryConfig& cfg, std::uint64_t seed) {
  if (cfg.k1 <= 0 || cfg.k2 <= 0) throw Error(ErrorCode::kInvalidArgument, "k must be positive");
  if (cfg.patch_width <= 0 || cfg.pool_factor <= 0 || cfg.layer2_width <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "patch and pooling widths must be positive");
  }
  if (melspecs.empty()) throw Error(ErrorCode::kInsufficientData, "no spectrograms");
  FeatureDictionary dict;
  dict.config = cfg;
  dict.n_mels = static_cast<int>(melspecs.front().vectors.cols());
  const Eigen::Index patch_dim = static_cast<Eigen::Index>(dict.n_mels) * cfg.patch_width;

  std::vector<Matrix> raw_parts;
  for (const auto& m : melspecs) {
    if (m.kind != FeatureKind::kLogMel || m.vectors.cols() != dict.n_mels) {
      throw Error(ErrorCode::kInvalidArgument, "dictionary input must be log-mel with equal band counts");
    }
    Matrix frames = cfg.band_median_norm ? detail::band_median_normalize(m.vectors) : m.vectors;
    Matrix raw = detail::stack_windows(frames, cfg.patch_width);
    const auto degenerate = detail::degenerate_rows(raw);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      if (!degenerate[static_cast<std::size_t>(r)]) keep.push_back(r);
    }
    raw_parts.emplace_back(raw(keep, Eigen::all));
  }
  Matrix raw = detail::subsample_rows(detail::concat_rows(raw_parts, patch_dim), cfg.max_patches,
                                      derive_seed(seed, "dict-l1-sample"));
  if (raw.rows() < std::max<Eigen::Index>(cfg.k1, 2)) {
    throw Error(ErrorCode::kInsufficientData, "fewer usable patches than layer-1 centroids");
  }
  dict.whitening = fit_whitening(raw, cfg.whiten_eps);
  Matrix white = dict.whitening.apply(raw);
  normalize_rows(white);
  auto l1 = spherical_kmeans(white, cfg.k1, cfg.max_iter, derive_seed(seed, "dict-l1"));
  dict.layer1_centroids = std::move(l1.centroids);
  dict.layer1_objective = std::move(l1.objective);

  std::vector<Matrix> l2_parts;
  for (const auto& m : melspecs) {
    const Matrix resp = rectified_responses(layer1_patches(m.vectors, dict), dict.layer1_centroids);
    Matrix p = layer2_patches(resp, cfg);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      if (p.row(r).squaredNorm() > 0) keep.push_back(r);
    }
    l2_parts.emplace_back(p(keep, Eigen::all));
  }
  Matrix l2_data = detail::subsample_rows(
      detail::concat_rows(l2_parts, static_cast<Eigen::Index>(cfg.k1) * cfg.layer2_width),
      cfg.max_patches, derive_seed(seed, "dict-l2-sample"));
  if (l2_data.rows() < cfg.k2) {
    throw Error(ErrorCode::kInsufficientData, "fewer usable layer-2 patches than centroids");
  }
  auto l2 = spherical_kmeans(l2_data, cfg.k2, cfg.max_iter, derive_seed(seed, "dict-l2"));
  dict.layer2_centroids = std::move(l2.centroids);
  dict.layer2_objective = std::move(l2.objective);
  return dict;
}

/// Fixed-length clip summary: [max1 | mean1 | max2 | mean2].
inline Vector encode_pool(const FeatureFrames& melspec, const FeatureDictionary& dict) {
  if (melspec.vectors.cols() != dict.n_mels) {
    throw Error(ErrorCode::kInvalidArgument, "log-mel band count does not match dictionary");
  }
  const Matrix r1 = rectified_responses(layer1_patches(melspec.vectors, dict), dict.layer1_centroids);
  const Matrix r2 = rectified_responses(layer2_patches(r1, dict.config), dict.layer2_centroids);
  Vector out(dict.summary_dim());
  out << temporal_pool(r1), temporal_pool(r2);
  return out;
}

}  // namespace avibench
