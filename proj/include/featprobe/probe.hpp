#pragma once

// Linear probes on frozen features: z-normalization, softmax regression
// trained by minibatch SGD with momentum, least squares for real targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "featprobe/error.hpp"
#include "featprobe/feature_matrix.hpp"
#include "featprobe/manifest.hpp"
#include "featprobe/parallel.hpp"
#include "featprobe/rng.hpp"

namespace featprobe::probe {

// ---------------------------------------------------------------------------
// Normalizer

struct Normalizer {
  Vector mean, std;
  std::vector<bool> constant;

  static constexpr double kConstantStd = 1e-8;

  static Normalizer fit(const Matrix& train) {
    require(train.size() > 0, Errc::invalid_argument, "cannot fit a normalizer on an empty matrix");
    require(train.rows() >= 2, Errc::invalid_argument, "normalizer needs at least 2 rows");
    Normalizer n;
    n.mean = train.colwise().mean().transpose();
    n.std.resize(train.cols());
    n.constant.resize(std::size_t(train.cols()));
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
      n.std(j) = std::sqrt((train.col(j).array() - n.mean(j)).square().mean());
      n.constant[std::size_t(j)] = n.std(j) < kConstantStd;
    }
    return n;
  }

  Matrix apply(const Matrix& m) const {
    require(m.cols() == mean.size(), Errc::shape_mismatch, "normalizer width mismatch");
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (constant[std::size_t(j)])
        out.col(j).setZero();
      else
        out.col(j) = (m.col(j).array() - mean(j)) / std(j);
    }
    return out;
  }
};

inline Normalizer fit_normalizer(const FeatureMatrix& train) { return Normalizer::fit(train.values()); }

// ---------------------------------------------------------------------------
// Softmax regression

struct TrainConfig {
  double learningRate = 0.01;
  double momentum = 0.9;
  int epochs = 100;
  std::size_t batchSize = 64;
  std::uint64_t seed = 0;
};

struct LogRegModel {
  Matrix weights;  // classes x p
  Vector bias;     // classes
  TrainConfig config;
  std::vector<double> epochLoss;  // mean cross-entropy on the full training set after each epoch

  int classes() const { return int(weights.rows()); }
};

/// Mean cross-entropy of softmax(W x + b) and its gradient. Templated so the
/// same formula can be evaluated in extended precision.
template <typename T>
T softmax_xent(const Eigen::Matrix<T, -1, -1>& W, const Eigen::Matrix<T, -1, 1>& b, const Eigen::Matrix<T, -1, -1>& X,
               std::span<const int> y, Eigen::Matrix<T, -1, -1>* gradW = nullptr,
               Eigen::Matrix<T, -1, 1>* gradB = nullptr) {
  using std::exp;
  using std::log;
  const Eigen::Index n = X.rows(), k = W.rows();
  Eigen::Matrix<T, -1, -1> z = X * W.transpose();  // n x k
  z.rowwise() += b.transpose();
  T loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T zmax = z.row(i).maxCoeff();
    T sum = 0;
    for (Eigen::Index c = 0; c < k; ++c) sum += exp(z(i, c) - zmax);
    const T lse = zmax + log(sum);
    loss += lse - z(i, y[std::size_t(i)]);
    // z becomes dLoss/dz: softmax minus one-hot
    for (Eigen::Index c = 0; c < k; ++c) z(i, c) = exp(z(i, c) - lse);
    z(i, y[std::size_t(i)]) -= T(1);
  }
  const T inv = T(1) / T(n);
  if (gradW) *gradW = (z.transpose() * X) * inv;
  if (gradB) *gradB = z.colwise().sum().transpose() * inv;
  return loss * inv;
}

inline std::vector<int> to_class_labels(std::span<const double> y) {
  std::vector<int> out;
  out.reserve(y.size());
  for (double v : y) {
    require(v >= 0 && v == std::floor(v), Errc::invalid_argument, "class labels must be non-negative integers");
    out.push_back(int(v));
  }
  return out;
}

/// Zero-initialised softmax regression; velocity v <- m v - lr g, theta <- theta + v;
/// examples reshuffled every epoch by the seeded generator.
inline LogRegModel train_logreg(const Matrix& X, std::span<const int> y, const TrainConfig& cfg,
                                int classes = 0) {
  require(X.rows() == Eigen::Index(y.size()), Errc::shape_mismatch, "label count does not match rows");
  require(X.rows() > 0 && cfg.batchSize > 0 && cfg.epochs >= 0, Errc::invalid_argument, "bad training setup");
  const int maxLabel = *std::max_element(y.begin(), y.end());
  classes = std::max(classes, maxLabel + 1);
  std::vector<bool> seen(std::size_t(classes), false);
  for (int v : y) seen[std::size_t(v)] = true;
  require(std::count(seen.begin(), seen.end(), true) >= 2, Errc::invalid_argument,
          "training needs at least 2 classes present");

  LogRegModel m;
  m.config = cfg;
  m.weights = Matrix::Zero(classes, X.cols());
  m.bias = Vector::Zero(classes);
  Matrix vW = Matrix::Zero(classes, X.cols()), gW;
  Vector vB = Vector::Zero(classes), gB;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(std::size_t(X.rows()));
  std::iota(order.begin(), order.end(), 0);
  Matrix batch;
  std::vector<int> batchY;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batchSize) {
      const std::size_t len = std::min(cfg.batchSize, order.size() - start);
      batch.resize(Eigen::Index(len), X.cols());
      batchY.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        batch.row(Eigen::Index(i)) = X.row(Eigen::Index(order[start + i]));
        batchY[i] = y[order[start + i]];
      }
      const double loss = softmax_xent<double>(m.weights, m.bias, batch, batchY, &gW, &gB);
      require(std::isfinite(loss), Errc::divergence, "loss became non-finite in epoch " + std::to_string(epoch));
      vW = cfg.momentum * vW - cfg.learningRate * gW;
      vB = cfg.momentum * vB - cfg.learningRate * gB;
      m.weights += vW;
      m.bias += vB;
    }
    const double full = softmax_xent<double>(m.weights, m.bias, X, y);
    require(std::isfinite(full) && m.weights.allFinite(), Errc::divergence,
            "training diverged in epoch " + std::to_string(epoch));
    m.epochLoss.push_back(full);
  }
  return m;
}

/// Argmax with ties to the lowest class index.
inline std::vector<int> predict(const LogRegModel& m, const Matrix& X) {
  require(X.cols() == m.weights.cols(), Errc::shape_mismatch,
          "model expects " + std::to_string(m.weights.cols()) + " features, got " + std::to_string(X.cols()));
  std::vector<int> out(std::size_t(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector z = m.weights * X.row(i).transpose() + m.bias;
    int best = 0;
    for (int c = 1; c < int(z.size()); ++c)
      if (z(c) > z(best)) best = c;
    out[std::size_t(i)] = best;
  }
  return out;
}

struct ClassifierEval {
  double accuracy = 0.0;
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted
};

inline ClassifierEval confusion_eval(std::span<const int> truth, std::span<const int> predicted, int classes) {
  require(truth.size() == predicted.size(), Errc::shape_mismatch, "prediction count mismatch");
  require(!truth.empty(), Errc::invalid_argument, "empty evaluation set");
  ClassifierEval e;
  e.confusion = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] < classes && predicted[i] < classes, Errc::invalid_argument, "label outside model classes");
    e.confusion(truth[i], predicted[i])++;
  }
  e.accuracy = double(e.confusion.trace()) / double(truth.size());
  return e;
}

inline ClassifierEval eval_classifier(const LogRegModel& m, const Matrix& X, std::span<const int> y) {
  return confusion_eval(y, predict(m, X), m.classes());
}

// ---------------------------------------------------------------------------
// Least squares

struct OlsModel {
  Vector weights;
  double intercept = 0.0;

  Vector predict(const Matrix& X) const { return (X * weights).array() + intercept; }
};

/// Minimum-norm least squares with an intercept column (complete orthogonal decomposition).
inline OlsModel train_ols(const Matrix& X, const Vector& y) {
  require(X.rows() > 0 && X.rows() == y.size(), Errc::shape_mismatch, "OLS needs matching, non-empty X and y");
  Matrix A(X.rows(), X.cols() + 1);
  A.leftCols(X.cols()) = X;
  A.col(X.cols()).setOnes();
  const Vector beta = Eigen::CompleteOrthogonalDecomposition<Matrix>(A).solve(y);
  OlsModel m;
  m.weights = beta.head(X.cols());
  m.intercept = beta(X.cols());
  return m;
}

inline double rmse(const Vector& predicted, const Vector& truth) {
  require(predicted.size() == truth.size() && truth.size() > 0, Errc::shape_mismatch, "RMSE size mismatch");
  return std::sqrt((predicted - truth).squaredNorm() / double(truth.size()));
}

// ---------------------------------------------------------------------------
// Reports

struct DecodeReport {
  std::string feature;
  std::string task;
  TaskKind kind = TaskKind::classification;
  std::string metric;           // "accuracy" or "rmse"
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;   // one per seed
  double mean = 0.0, std = 0.0; // population std over seeds
  double baseline = 0.0;        // 1/classes, or RMSE of predicting the training mean
  std::vector<Eigen::MatrixXi> confusions;

  void finalize() {
    mean = values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    double s = 0.0;
    for (double v : values) s += (v - mean) * (v - mean);
    std = values.empty() ? 0.0 : std::sqrt(s / double(values.size()));
  }
};

/// Labels and train/test partition for one task.
struct DecodeProblem {
  std::string task;
  TaskKind kind = TaskKind::classification;
  std::vector<double> labels;  // one per example (all splits)
  std::vector<std::size_t> train, test;
};

inline DecodeProblem make_problem(const DatasetManifest& m, const std::string& task) {
  DecodeProblem p;
  p.task = task;
  require(m.tasks.count(task) > 0, Errc::config, "manifest has no task '" + task + "'");
  p.kind = m.tasks.at(task);
  p.labels = m.labels(task);
  p.train = m.indices(Split::train);
  p.test = m.indices(Split::test);
  return p;
}

namespace detail {

inline Matrix rows_of(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(Eigen::Index(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(Eigen::Index(i)) = m.row(Eigen::Index(idx[i]));
  return out;
}

template <typename T>
std::vector<T> pick(std::span<const double> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(T(v[i]));
  return out;
}

}  // namespace detail

/// Normalize on the training split, fit, evaluate on the test split, once per seed.
/// Regression targets are solved once by least squares (seeds are not used).
inline DecodeReport decode(const FeatureMatrix& features, const DecodeProblem& prob, const TrainConfig& base,
                           std::span<const std::uint64_t> seeds, std::string featureName = {}) {
  require(features.rows() == Eigen::Index(prob.labels.size()), Errc::shape_mismatch,
          "features have " + std::to_string(features.rows()) + " rows but task '" + prob.task + "' has " +
              std::to_string(prob.labels.size()) + " labels");
  require(!prob.train.empty() && !prob.test.empty(), Errc::invalid_argument, "train and test splits must be non-empty");
  const Matrix trainRaw = detail::rows_of(features.values(), prob.train);
  const Normalizer norm = Normalizer::fit(trainRaw);
  const Matrix Xtr = norm.apply(trainRaw);
  const Matrix Xte = norm.apply(detail::rows_of(features.values(), prob.test));

  DecodeReport r;
  r.feature = std::move(featureName);
  r.task = prob.task;
  r.kind = prob.kind;
  if (prob.kind == TaskKind::classification) {
    r.metric = "accuracy";
    const auto ytr = detail::pick<int>(prob.labels, prob.train);
    const auto yte = detail::pick<int>(prob.labels, prob.test);
    const int classes = 1 + std::max(*std::max_element(ytr.begin(), ytr.end()), *std::max_element(yte.begin(), yte.end()));
    r.baseline = 1.0 / classes;
    require(!seeds.empty(), Errc::invalid_argument, "no seeds");
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      const auto model = train_logreg(Xtr, ytr, cfg, classes);
      const auto e = eval_classifier(model, Xte, yte);
      r.seeds.push_back(seed);
      r.values.push_back(e.accuracy);
      r.confusions.push_back(e.confusion);
    }
  } else {
    r.metric = "rmse";
    const auto ytrv = detail::pick<double>(prob.labels, prob.train);
    const auto ytev = detail::pick<double>(prob.labels, prob.test);
    const Vector ytr = Eigen::Map<const Vector>(ytrv.data(), Eigen::Index(ytrv.size()));
    const Vector yte = Eigen::Map<const Vector>(ytev.data(), Eigen::Index(ytev.size()));
    r.baseline = rmse(Vector::Constant(yte.size(), ytr.mean()), yte);
    const auto model = train_ols(Xtr, ytr);
    r.seeds.push_back(0);
    r.values.push_back(rmse(model.predict(Xte), yte));
  }
  r.finalize();
  return r;
}

/// Horizontal concatenation of blocks, then decode.
inline DecodeReport concat_decode(std::span<const FeatureMatrix> blocks, const DecodeProblem& prob,
                                  const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                  std::string featureName = {}) {
  require(!blocks.empty(), Errc::invalid_argument, "empty block list");
  return decode(FeatureMatrix::hconcat(blocks), prob, cfg, seeds, std::move(featureName));
}

struct CrossTaskCell {
  std::string source, target;
  DecodeReport report;
};

/// Decode every target task from every source task's features.
inline std::vector<CrossTaskCell> cross_task_matrix(const std::map<std::string, FeatureMatrix>& sources,
                                                    const std::map<std::string, DecodeProblem>& targets,
                                                    const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                                    std::size_t workers = 1) {
  std::vector<CrossTaskCell> cells;
  for (const auto& [s, _] : sources)
    for (const auto& [t, __] : targets) cells.push_back({s, t, {}});
  parallel_for(cells.size(), workers, [&](std::size_t k) {
    auto& c = cells[k];
    c.report = decode(sources.at(c.source), targets.at(c.target), cfg, seeds, c.source);
  });
  return cells;
}

}  // namespace featprobe::probe
