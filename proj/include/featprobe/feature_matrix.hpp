#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "featprobe/csv.hpp"
#include "featprobe/error.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// n examples x p features in double precision. Finite values only.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;

  explicit FeatureMatrix(Matrix values, std::vector<std::string> columnNames = {})
      : values_(std::move(values)), names_(std::move(columnNames)) {
    require(names_.empty() || names_.size() == static_cast<std::size_t>(values_.cols()),
            Errc::shape_mismatch, "column name count does not match width");
    require(values_.allFinite(), Errc::invalid_argument, "feature matrix contains non-finite values");
  }

  /// Stack equal-length rows.
  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows,
                                 std::vector<std::string> columnNames = {}) {
    require(!rows.empty(), Errc::invalid_argument, "no rows");
    const auto p = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == p, Errc::shape_mismatch,
              "row " + std::to_string(i) + " has length " + std::to_string(rows[i].size()) +
                  ", expected " + std::to_string(p));
      for (std::size_t j = 0; j < p; ++j) m(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
    }
    return FeatureMatrix(std::move(m), std::move(columnNames));
  }

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  const std::vector<std::string>& column_names() const { return names_; }

  std::string column_name(Eigen::Index j) const {
    return names_.empty() ? "f" + std::to_string(j) : names_[static_cast<std::size_t>(j)];
  }

  FeatureMatrix select_rows(std::span<const std::size_t> idx) const {
    Matrix m(static_cast<Eigen::Index>(idx.size()), cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] < static_cast<std::size_t>(rows()), Errc::invalid_argument, "row index out of range");
      m.row(Eigen::Index(i)) = values_.row(Eigen::Index(idx[i]));
    }
    return FeatureMatrix(std::move(m), names_);
  }

  /// Horizontal concatenation; all blocks must share n.
  static FeatureMatrix hconcat(std::span<const FeatureMatrix> blocks) {
    require(!blocks.empty(), Errc::invalid_argument, "no blocks to concatenate");
    const auto n = blocks.front().rows();
    Eigen::Index p = 0;
    bool named = true;
    for (const auto& b : blocks) {
      require(b.rows() == n, Errc::shape_mismatch, "blocks disagree on example count");
      p += b.cols();
      named = named && !b.names_.empty();
    }
    Matrix m(n, p);
    std::vector<std::string> names;
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      m.middleCols(at, b.cols()) = b.values_;
      if (named) names.insert(names.end(), b.names_.begin(), b.names_.end());
      at += b.cols();
    }
    return FeatureMatrix(std::move(m), std::move(names));
  }

  /// f32 tensor dims [n, p].
  Tensor to_tensor(std::string name) const {
    std::vector<float> data(static_cast<std::size_t>(rows() * cols()));
    for (Eigen::Index i = 0; i < rows(); ++i)
      for (Eigen::Index j = 0; j < cols(); ++j)
        data[static_cast<std::size_t>(i * cols() + j)] = static_cast<float>(values_(i, j));
    return Tensor(std::move(name), {std::uint64_t(rows()), std::uint64_t(cols())}, std::move(data));
  }

  static FeatureMatrix from_tensor(const Tensor& t) {
    require(t.rank() == 2, Errc::shape_mismatch, "feature tensor must be rank 2, got " + dims_string(t.dims()));
    const auto n = Eigen::Index(t.dim(0)), p = Eigen::Index(t.dim(1));
    Matrix m(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < p; ++j) m(i, j) = t[static_cast<std::size_t>(i * p + j)];
    return FeatureMatrix(std::move(m));
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot write " + path.string());
    csv::Writer w(out);
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < cols(); ++j) row.push_back(column_name(j));
    w.row(row);
    for (Eigen::Index i = 0; i < rows(); ++i) {
      row.clear();
      for (Eigen::Index j = 0; j < cols(); ++j) row.push_back(csv::format_number(values_(i, j)));
      w.row(row);
    }
  }

  static FeatureMatrix read_csv(const std::filesystem::path& path) {
    const auto table = csv::read_file(path);
    require(table.size() >= 2, Errc::shape_mismatch, "CSV " + path.string() + " has no data rows");
    const auto p = table.front().size();
    Matrix m(Eigen::Index(table.size() - 1), Eigen::Index(p));
    for (std::size_t i = 1; i < table.size(); ++i) {
      require(table[i].size() == p, Errc::shape_mismatch, "ragged CSV row " + std::to_string(i));
      for (std::size_t j = 0; j < p; ++j) m(Eigen::Index(i - 1), Eigen::Index(j)) = std::stod(table[i][j]);
    }
    return FeatureMatrix(std::move(m), table.front());
  }

 private:
  Matrix values_;
  std::vector<std::string> names_;
};

}  // namespace featprobe
