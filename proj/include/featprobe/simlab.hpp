#pragma once

// Representation similarity between two feature sets over the same examples:
// linear CKA, linear-regression R^2, CCA (R^2 and mean rho), SVCCA.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "featprobe/error.hpp"
#include "featprobe/feature_matrix.hpp"
#include "featprobe/parallel.hpp"
#include "featprobe/rng.hpp"

namespace featprobe::simlab {

enum class Measure { cka, lrR2, ccaR2, ccaRho, svccaR2, svccaRho };

inline constexpr Measure kAllMeasures[] = {Measure::cka,   Measure::lrR2,    Measure::ccaR2,
                                           Measure::ccaRho, Measure::svccaR2, Measure::svccaRho};

inline const char* measure_name(Measure m) {
  switch (m) {
    case Measure::cka: return "cka";
    case Measure::lrR2: return "lrR2";
    case Measure::ccaR2: return "ccaR2";
    case Measure::ccaRho: return "ccaRho";
    case Measure::svccaR2: return "svccaR2";
    case Measure::svccaRho: return "svccaRho";
  }
  return "?";
}

inline Measure parse_measure(const std::string& s) {
  for (Measure m : kAllMeasures)
    if (s == measure_name(m)) return m;
  throw Error(Errc::invalid_argument, "unknown similarity measure '" + s + "'");
}

inline Matrix center_columns(const Matrix& m) {
  require(m.rows() >= 2, Errc::invalid_argument, "centering needs at least 2 examples");
  return m.rowwise() - m.colwise().mean();
}

inline FeatureMatrix center_columns(const FeatureMatrix& m) {
  return FeatureMatrix(center_columns(m.values()), m.column_names());
}

/// Centered and, optionally, unit-variance columns (zero-variance columns stay 0).
inline Matrix zscore_columns(const Matrix& m) {
  Matrix c = center_columns(m);
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    const double sd = std::sqrt(c.col(j).squaredNorm() / double(c.rows()));
    if (sd > 1e-12) c.col(j) /= sd;
  }
  return c;
}

/// Two column-centered feature sets over the same n examples.
class CenteredPair {
 public:
  CenteredPair(const Matrix& x, const Matrix& y, bool zscore = false) {
    require(x.rows() == y.rows(), Errc::shape_mismatch,
            "feature sets disagree on example count (" + std::to_string(x.rows()) + " vs " +
                std::to_string(y.rows()) + ")");
    require(x.rows() >= 2, Errc::invalid_argument, "similarity needs at least 2 examples");
    x_ = zscore ? zscore_columns(x) : center_columns(x);
    y_ = zscore ? zscore_columns(y) : center_columns(y);
  }
  CenteredPair(const FeatureMatrix& x, const FeatureMatrix& y, bool zscore = false)
      : CenteredPair(x.values(), y.values(), zscore) {}

  const Matrix& x() const { return x_; }
  const Matrix& y() const { return y_; }
  Eigen::Index n() const { return x_.rows(); }

  CenteredPair swapped() const {
    CenteredPair p = *this;
    std::swap(p.x_, p.y_);
    return p;
  }

 private:
  Matrix x_, y_;
};

struct OrthonormalBasis {
  Matrix q;  // n x rank, orthonormal columns
  Eigen::Index rank() const { return q.cols(); }
};

inline constexpr double kRankTol = 1e-10;

/// Column-pivoted Householder QR; keeps columns whose |R_ii| exceeds kRankTol * |R_00|.
inline OrthonormalBasis orthonormal_basis(const Matrix& m) {
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  const Matrix& r = qr.matrixQR();
  const Eigen::Index diag = std::min(m.rows(), m.cols());
  const double lead = diag ? std::abs(r(0, 0)) : 0.0;
  Eigen::Index rank = 0;
  while (rank < diag && lead > 0.0 && std::abs(r(rank, rank)) > kRankTol * lead) ++rank;
  OrthonormalBasis b;
  b.q = qr.householderQ() * Matrix::Identity(m.rows(), rank);
  return b;
}

/// Singular values of a (small) matrix, each clipped to [0, 1].
inline Vector clipped_singular_values(const Matrix& m) {
  if (m.size() == 0) return Vector();
  Vector s = Eigen::JacobiSVD<Matrix>(m).singularValues();
  return s.cwiseMax(0.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------

inline double cka_feature_form(const Matrix& x, const Matrix& y) {
  const double xx = (x.transpose() * x).norm(), yy = (y.transpose() * y).norm();
  require(xx > 0.0 && yy > 0.0, Errc::undefined_similarity, "CKA undefined: a feature set has zero variance");
  return (y.transpose() * x).squaredNorm() / (xx * yy);
}

/// tr(Kx Ky) / sqrt(tr(Kx^2) tr(Ky^2)) with K = M M^T.
inline double cka_gram_form(const Matrix& x, const Matrix& y) {
  const Matrix kx = x * x.transpose(), ky = y * y.transpose();
  const double xx = kx.squaredNorm(), yy = ky.squaredNorm();  // tr(K^2) for symmetric K
  require(xx > 0.0 && yy > 0.0, Errc::undefined_similarity, "CKA undefined: a feature set has zero variance");
  return kx.cwiseProduct(ky).sum() / std::sqrt(xx * yy);
}

/// Linear CKA; picks the Gram form when both feature widths exceed n.
inline double linear_cka(const CenteredPair& p) {
  if (std::min(p.x().cols(), p.y().cols()) > p.n()) return cka_gram_form(p.x(), p.y());
  return cka_feature_form(p.x(), p.y());
}

/// ||Q_Y^T X||_F^2 / ||X||_F^2.
inline double linreg_r2(const CenteredPair& p) {
  const double xx = p.x().squaredNorm();
  require(xx > 0.0, Errc::undefined_similarity, "R^2 undefined: X is all zeros");
  const auto qy = orthonormal_basis(p.y());
  if (qy.rank() == 0) return 0.0;
  return (qy.q.transpose() * p.x()).squaredNorm() / xx;
}

struct CcaResult {
  double r2 = 0.0;
  double rho = 0.0;
  Vector correlations;  // singular values of Q_Y^T Q_X, descending
};

/// R^2_CCA = ||Q_Y^T Q_X||_F^2 / p1 and rho_CCA = ||Q_Y^T Q_X||_* / p1, p1 = columns of X.
inline CcaResult cca_similarities(const CenteredPair& p) {
  const auto qx = orthonormal_basis(p.x()), qy = orthonormal_basis(p.y());
  require(qx.rank() > 0 && qy.rank() > 0, Errc::undefined_similarity, "CCA undefined: a side has rank 0");
  const Matrix m = qy.q.transpose() * qx.q;
  const double p1 = double(p.x().cols());
  CcaResult r;
  r.correlations = clipped_singular_values(m);
  r.r2 = m.squaredNorm() / p1;
  r.rho = r.correlations.sum() / p1;
  return r;
}

struct SvccaResult {
  double r2 = 0.0;
  double rho = 0.0;
  Eigen::Index dx = 0, dy = 0;
};

/// Smallest d whose leading squared singular values hold at least `keep` of the total.
inline Eigen::Index truncation_rank(const Vector& singular, double keep) {
  const double total = singular.squaredNorm();
  if (!(total > 0.0)) return 0;
  double acc = 0.0;
  for (Eigen::Index d = 0; d < singular.size(); ++d) {
    acc += singular(d) * singular(d);
    if (acc >= keep * total) return d + 1;
  }
  return singular.size();
}

inline Matrix leading_left_singular_vectors(const Matrix& m, double keep, Eigen::Index& d) {
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU);
  d = truncation_rank(svd.singularValues(), keep);
  return svd.matrixU().leftCols(d);
}

inline SvccaResult svcca_similarities(const CenteredPair& p, double varianceKeep = 0.99) {
  require(varianceKeep > 0 && varianceKeep <= 1, Errc::invalid_argument, "varianceKeep must be in (0, 1]");
  SvccaResult r;
  const Matrix ux = leading_left_singular_vectors(p.x(), varianceKeep, r.dx);
  const Matrix uy = leading_left_singular_vectors(p.y(), varianceKeep, r.dy);
  require(r.dx > 0 && r.dy > 0, Errc::undefined_similarity, "SVCCA undefined: zero matrix");
  const Matrix m = uy.transpose() * ux;
  const double denom = double(std::min(r.dx, r.dy));
  r.r2 = m.squaredNorm() / denom;
  r.rho = clipped_singular_values(m).sum() / denom;
  return r;
}

struct SimilarityOptions {
  double varianceKeep = 0.99;
  bool zscore = false;
};

inline double similarity(const CenteredPair& p, Measure m, const SimilarityOptions& opt = {}) {
  switch (m) {
    case Measure::cka: return linear_cka(p);
    case Measure::lrR2: return linreg_r2(p);
    case Measure::ccaR2: return cca_similarities(p).r2;
    case Measure::ccaRho: return cca_similarities(p).rho;
    case Measure::svccaR2: return svcca_similarities(p, opt.varianceKeep).r2;
    case Measure::svccaRho: return svcca_similarities(p, opt.varianceKeep).rho;
  }
  return 0.0;
}

inline double similarity(const FeatureMatrix& x, const FeatureMatrix& y, Measure m,
                         const SimilarityOptions& opt = {}) {
  return similarity(CenteredPair(x, y, opt.zscore), m, opt);
}

// ---------------------------------------------------------------------------
// Grids

struct FeatureSet {
  std::string name;
  FeatureMatrix features;
  std::string orderHash;  // identifies the example order; empty = unchecked
};

struct NoiseBaseline {
  std::uint64_t seed = 0;
  Eigen::Index width = 128;
};

inline const std::string kNoiseLabel = "noise";

/// n x width standard normal matrix from a recorded seed.
inline FeatureMatrix noise_features(Eigen::Index n, const NoiseBaseline& nb) {
  Rng rng(nb.seed);
  Matrix m(n, nb.width);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < nb.width; ++j) m(i, j) = rng.normal();
  return FeatureMatrix(std::move(m));
}

struct SimilarityGrid {
  Measure measure = Measure::cka;
  std::vector<std::string> rowLabels, colLabels;
  Matrix values;
  std::optional<NoiseBaseline> noise;
};

/// Pairwise similarities of rows x cols (plus a trailing noise column when requested).
inline SimilarityGrid similarity_grid(std::span<const FeatureSet> rows, std::span<const FeatureSet> cols,
                                      Measure measure, std::optional<NoiseBaseline> noise = std::nullopt,
                                      const SimilarityOptions& opt = {}, std::size_t workers = 1) {
  require(!rows.empty() && !cols.empty(), Errc::invalid_argument, "empty grid axis");
  const Eigen::Index n = rows.front().features.rows();
  std::string hash;
  for (const auto* axis : {&rows, &cols})
    for (const auto& s : *axis) {
      require(s.features.rows() == n, Errc::shape_mismatch, "feature set '" + s.name + "' has a different n");
      if (!s.orderHash.empty()) {
        if (hash.empty()) hash = s.orderHash;
        require(s.orderHash == hash, Errc::shape_mismatch,
                "feature set '" + s.name + "' uses a different example order");
      }
    }
  std::vector<FeatureSet> columns(cols.begin(), cols.end());
  if (noise) columns.push_back({kNoiseLabel, noise_features(n, *noise), hash});

  SimilarityGrid g;
  g.measure = measure;
  g.noise = noise;
  for (const auto& r : rows) g.rowLabels.push_back(r.name);
  for (const auto& c : columns) g.colLabels.push_back(c.name);
  g.values.resize(Eigen::Index(rows.size()), Eigen::Index(columns.size()));
  const std::size_t nc = columns.size();
  parallel_for(rows.size() * nc, workers, [&](std::size_t k) {
    const std::size_t i = k / nc, j = k % nc;
    g.values(Eigen::Index(i), Eigen::Index(j)) = similarity(rows[i].features, columns[j].features, measure, opt);
  });
  return g;
}

/// Elementwise mean of equally-labelled grids (e.g. one per initialization seed).
inline SimilarityGrid average_grids(std::span<const SimilarityGrid> grids) {
  require(!grids.empty(), Errc::invalid_argument, "no grids to average");
  SimilarityGrid avg = grids.front();
  for (std::size_t k = 1; k < grids.size(); ++k) {
    require(grids[k].rowLabels == avg.rowLabels && grids[k].colLabels == avg.colLabels, Errc::shape_mismatch,
            "grids have different labels");
    avg.values += grids[k].values;
  }
  avg.values /= double(grids.size());
  return avg;
}

}  // namespace featprobe::simlab
