#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "featprobe/feature_matrix.hpp"
#include "featprobe/rng.hpp"

namespace fptest {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fp") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline featprobe::Matrix random_matrix(featprobe::Rng& rng, Eigen::Index n, Eigen::Index p) {
  featprobe::Matrix m(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) m(i, j) = rng.normal();
  return m;
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
inline featprobe::Matrix random_orthogonal(featprobe::Rng& rng, Eigen::Index p) {
  Eigen::HouseholderQR<featprobe::Matrix> qr(random_matrix(rng, p, p));
  return qr.householderQ() * featprobe::Matrix::Identity(p, p);
}

/// n x k orthonormal columns, each orthogonal to the all-ones vector.
inline featprobe::Matrix centered_orthonormal(featprobe::Rng& rng, Eigen::Index n, Eigen::Index k) {
  featprobe::Matrix a(n, k + 1);
  a.col(0).setOnes();
  a.rightCols(k) = random_matrix(rng, n, k);
  Eigen::HouseholderQR<featprobe::Matrix> qr(a);
  const featprobe::Matrix q = qr.householderQ() * featprobe::Matrix::Identity(n, k + 1);
  return q.rightCols(k);
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const fs::path& p, const std::string& bytes) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace fptest
