#pragma once

#include "cotprobe/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace cotprobe {

enum class PcaFitMode { train_only, all };

/// Mean and top-k principal axes of a training matrix.
/// Rows of `components` are orthonormal; explained_variance is non-increasing.
template <typename Scalar = double>
struct PcaModel {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector mean;
  Matrix components;  // k x dim
  Vector explained_variance;

  Eigen::Index k() const { return components.rows(); }
  Eigen::Index dim() const { return mean.size(); }
};

namespace detail {

// Largest-magnitude entry made positive; the first index wins ties.
template <typename Row>
void canonicalize_sign(Row&& row) {
  Eigen::Index arg = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (std::abs(row[j]) > std::abs(row[arg])) arg = j;
  }
  if (row[arg] < 0) row = -row;
}

}  // namespace detail

/// Fits PCA by a deterministic dense SVD of the centered data.
/// k = min(k_max, n - 1, d). Throws DataError for n < 2 or non-finite input.
template <typename Derived>
PcaModel<typename Derived::Scalar> fit_pca(const Eigen::MatrixBase<Derived>& X, Eigen::Index k_max) {
  using Scalar = typename Derived::Scalar;
  using Model = PcaModel<Scalar>;
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) throw DataError("fit_pca needs at least 2 rows (got " + std::to_string(n) + ")");
  if (d < 1) throw DataError("fit_pca needs at least 1 column");
  if (k_max < 1) throw ConfigError("fit_pca k_max must be >= 1");
  if (!X.allFinite()) throw DataError("fit_pca input contains non-finite values");

  Model m;
  m.mean = X.colwise().mean().transpose();
  const typename Model::Matrix centered = X.rowwise() - m.mean.transpose();

  Eigen::BDCSVD<typename Model::Matrix> svd(centered, Eigen::ComputeThinV);
  const Eigen::Index k = std::min({k_max, n - 1, d});
  m.components = svd.matrixV().leftCols(k).transpose();
  for (Eigen::Index i = 0; i < k; ++i) detail::canonicalize_sign(m.components.row(i));
  m.explained_variance = svd.singularValues().head(k).array().square() / Scalar(n - 1);
  return m;
}

/// Z = (X - mean) * components^T
template <typename Scalar, typename Derived>
typename PcaModel<Scalar>::Matrix project(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& X) {
  if (X.cols() != model.dim()) {
    throw DataError("project: input has " + std::to_string(X.cols()) + " columns, model expects " +
                    std::to_string(model.dim()));
  }
  return (X.template cast<Scalar>().rowwise() - model.mean.transpose()) * model.components.transpose();
}

/// X_hat = Z * components + mean
template <typename Scalar, typename Derived>
typename PcaModel<Scalar>::Matrix reconstruct(const PcaModel<Scalar>& model, const Eigen::MatrixBase<Derived>& Z) {
  if (Z.cols() != model.k()) {
    throw DataError("reconstruct: input has " + std::to_string(Z.cols()) + " columns, model has k=" +
                    std::to_string(model.k()));
  }
  typename PcaModel<Scalar>::Matrix out = Z.template cast<Scalar>() * model.components;
  out.rowwise() += model.mean.transpose();
  return out;
}

}  // namespace cotprobe
