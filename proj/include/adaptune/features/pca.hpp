#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adaptune/error.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::features {

/// Per-column z-scoring from training statistics. Constant columns keep a
/// unit scale so they map to 0.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const RowMatrix& x) {
    if (x.rows() < 1) throw DataError("cannot standardize an empty matrix");
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale = ((x.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (s.scale[j] < 1e-12) s.scale[j] = 1.0;
    return s;
  }

  RowMatrix transform(const RowMatrix& x) const {
    if (x.cols() != mean.size()) {
      throw DimensionError("standardizer expects " + std::to_string(mean.size()) + " columns, got " +
                           std::to_string(x.cols()));
    }
    return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

struct PCAModel {
  Eigen::RowVectorXd mean;
  RowMatrix components;                  // D_in × n_components, orthonormal columns
  Eigen::VectorXd explained_variance;    // non-increasing
  std::size_t requested_components = 0;  // before clamping

  std::size_t input_dim() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t n_components() const { return static_cast<std::size_t>(components.cols()); }
};

/// Principal components of the mean-centered rows of x. n_components is
/// clamped to min(n − 1, D) (and to the numerical rank) with a warning.
inline PCAModel pca_fit(const RowMatrix& x, std::size_t n_components = 100, std::ostream* warn = &std::clog) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  if (n < 2) throw DataError("PCA needs at least 2 rows, got " + std::to_string(n));
  if (n_components == 0) throw ConfigError("PCA needs at least one component");
  PCAModel model;
  model.requested_components = n_components;
  model.mean = x.colwise().mean();
  const RowMatrix xc = x.rowwise() - model.mean;
  const double denom = static_cast<double>(n - 1);

  std::size_t k = std::min({n_components, n - 1, d});
  Eigen::VectorXd eigvals;
  RowMatrix vecs;  // D × k
  if (d <= n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((xc.transpose() * xc) / denom);
    eigvals = es.eigenvalues().reverse();
    vecs = es.eigenvectors().rowwise().reverse();
  } else {
    // Gram route: eigenvectors of Xc·Xcᵀ mapped back through Xcᵀ.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((xc * xc.transpose()) / denom);
    eigvals = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    vecs = RowMatrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j) {
      Eigen::VectorXd col = xc.transpose() * u.col(j);
      const double norm = col.norm();
      if (norm > 0.0) vecs.col(j) = col / norm;
    }
  }
  const double top = std::max(eigvals.size() ? eigvals[0] : 0.0, 0.0);
  std::size_t rank = 0;
  while (rank < static_cast<std::size_t>(eigvals.size()) && eigvals[static_cast<Eigen::Index>(rank)] > 1e-12 * top &&
         eigvals[static_cast<Eigen::Index>(rank)] > 0.0)
    ++rank;
  if (d > n) k = std::min(k, rank);
  if (k == 0) throw DegeneracyError("PCA input has no variance");
  if (k < n_components && warn) {
    *warn << "warning: PCA components clamped from " << n_components << " to " << k << " (n=" << n << ", D=" << d
          << ")\n";
  }
  model.components = vecs.leftCols(static_cast<Eigen::Index>(k));
  model.explained_variance = eigvals.head(static_cast<Eigen::Index>(k)).cwiseMax(0.0);
  // sign convention: the largest-magnitude entry of each component is positive
  for (Eigen::Index j = 0; j < model.components.cols(); ++j) {
    Eigen::Index arg = 0;
    model.components.col(j).cwiseAbs().maxCoeff(&arg);
    if (model.components(arg, j) < 0.0) model.components.col(j) *= -1.0;
  }
  return model;
}

inline RowMatrix pca_transform(const PCAModel& model, const RowMatrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw DimensionError("PCA expects " + std::to_string(model.input_dim()) + " columns, got " +
                         std::to_string(x.cols()));
  }
  return (x.rowwise() - model.mean) * model.components;
}

/// Maps projected rows back to the input space.
inline RowMatrix pca_inverse(const PCAModel& model, const RowMatrix& z) {
  if (static_cast<std::size_t>(z.cols()) != model.n_components()) {
    throw DimensionError("PCA inverse expects " + std::to_string(model.n_components()) + " columns");
  }
  return (z * model.components.transpose()).rowwise() + model.mean;
}

}  // namespace adaptune::features
