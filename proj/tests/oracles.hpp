#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "featprobe/tensor.hpp"
#include "featprobe/feature_matrix.hpp"

namespace fptest {

using featprobe::Matrix;
using featprobe::Vector;

inline long double ricker_oracle(long double t, long double a) {
  const long double pi = std::numbers::pi_v<long double>;
  return 2.0L / (std::sqrt(3.0L * a) * std::pow(pi, 0.25L)) * (1 - (t / a) * (t / a)) *
         std::exp(-t * t / (2 * a * a));
}

// numpy-style: full convolution, then the centred slice of the input's length
inline std::vector<double> same_oracle(const std::vector<double>& x, const std::vector<double>& w) {
  const std::size_t L = x.size(), M = w.size();
  std::vector<long double> full(L + M - 1, 0.0L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < M; ++j) full[i + j] += (long double)x[i] * w[j];
  const std::size_t start = (M - 1) / 2;
  return {full.begin() + long(start), full.begin() + long(start + L)};
}

inline std::vector<double> row_of(const Matrix& m, Eigen::Index i) {
  std::vector<double> r(std::size_t(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) r[std::size_t(k)] = m(i, k);
  return r;
}

/// Per-row mean of the brute-force Ricker convolution at width a.
inline std::vector<double> cwt_mean_oracle(const Matrix& m, double a) {
  std::vector<double> w(std::min<std::size_t>(std::size_t(10 * a), std::size_t(m.cols())));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = double(ricker_oracle((long double)i - (w.size() - 1) / 2.0L, a));
  std::vector<double> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto y = same_oracle(row_of(m, r), w);
    long double s = 0;
    for (double v : y) s += v;
    out.push_back(double(s / y.size()));
  }
  return out;
}

/// Linear CKA as HSIC(K,L)/sqrt(HSIC(K,K) HSIC(L,L)) with an explicit centering matrix.
inline double cka_hsic_oracle(const Matrix& x, const Matrix& y) {
  const Eigen::Index n = x.rows();
  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / double(n));
  const Matrix k = h * (x * x.transpose()) * h, l = h * (y * y.transpose()) * h;
  return (k * l).trace() / std::sqrt((k * k).trace() * (l * l).trace());
}

/// Canonical correlations from the symmetric-definite pencil
/// [0 Sxy; Syx 0] v = rho [Sxx 0; 0 Syy] v, descending, min(p, q) of them.
inline Vector cca_geneig_oracle(const Matrix& x, const Matrix& y) {
  const Matrix xc = x.rowwise() - x.colwise().mean(), yc = y.rowwise() - y.colwise().mean();
  const Eigen::Index p = x.cols(), q = y.cols();
  Matrix a = Matrix::Zero(p + q, p + q), b = Matrix::Zero(p + q, p + q);
  a.topRightCorner(p, q) = xc.transpose() * yc;
  a.bottomLeftCorner(q, p) = yc.transpose() * xc;
  b.topLeftCorner(p, p) = xc.transpose() * xc;
  b.bottomRightCorner(q, q) = yc.transpose() * yc;
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(a, b);
  const Vector ev = es.eigenvalues();
  const Eigen::Index k = std::min(p, q);
  Vector rho(k);
  for (Eigen::Index i = 0; i < k; ++i) rho(i) = ev(ev.size() - 1 - i);
  return rho;
}

/// Zero-offset deformable conv as a plain stride-2 pad-1 5x5 conv over rows 2i-1..2i+3.
inline double regular_grid_oracle(const featprobe::Tensor& in, const featprobe::Tensor& w,
                                  std::size_t o, std::size_t i, std::size_t j) {
  const std::size_t C = in.dim(0);
  const long long H = (long long)in.dim(1), W = (long long)in.dim(2);
  long double acc = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (int ky = 0; ky < 5; ++ky)
      for (int kx = 0; kx < 5; ++kx) {
        const long long r = 2 * (long long)i - 1 + ky, q = 2 * (long long)j - 1 + kx;
        if (r < 0 || q < 0 || r >= H || q >= W) continue;
        acc += (long double)w[((o * C + c) * 5 + std::size_t(ky)) * 5 + std::size_t(kx)] * in.at(c, r, q);
      }
  return double(acc);
}

}  // namespace fptest
