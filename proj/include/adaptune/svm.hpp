#pragma once

// RBF-kernel support vector machine trained with SMO, one-vs-rest for more
// than two classes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adaptune/error.hpp"
#include "adaptune/metrics.hpp"
#include "adaptune/parallel.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::svm {

inline double rbf_kernel(std::span<const double> x, std::span<const double> z, double gamma) {
  if (x.size() != z.size()) {
    throw DimensionError("rbf_kernel: dimension " + std::to_string(x.size()) + " vs " + std::to_string(z.size()));
  }
  if (!(gamma > 0.0)) throw ConfigError("rbf_kernel: gamma must be positive");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - z[i]) * (x[i] - z[i]);
  return std::exp(-gamma * d2);
}

struct SvmConfig {
  double c = 1.0;
  double gamma = 0.0;  // ≤ 0 selects 1/(D·Var(X))
  double tol = 1e-3;
  std::uint64_t seed = 0;
  std::size_t max_sweeps = 100000;

  void validate() const {
    if (!(c > 0.0)) throw ConfigError("SVM C must be positive");
    if (!(tol > 0.0)) throw ConfigError("SVM tolerance must be positive");
  }
};

/// 1/(D·Var(X)) over every entry of X; 1 when X is constant.
inline double scale_gamma(const RowMatrix& x) {
  if (x.size() == 0) throw DataError("cannot derive gamma from an empty matrix");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  return var > 0.0 ? 1.0 / (static_cast<double>(x.cols()) * var) : 1.0;
}

struct BinarySvm {
  RowMatrix support;          // rows of the training data with α > 0
  Eigen::VectorXd coef;       // αᵢ·yᵢ
  Eigen::VectorXd alpha;      // αᵢ
  std::vector<std::size_t> support_index;  // training row of each support vector
  double bias = 0.0;
  double gamma = 1.0;
  double c = 1.0;

  double decision(std::span<const double> x) const {
    if (static_cast<Eigen::Index>(x.size()) != support.cols()) {
      throw DimensionError("SVM expects " + std::to_string(support.cols()) + " features, got " +
                           std::to_string(x.size()));
    }
    double f = bias;
    for (Eigen::Index i = 0; i < support.rows(); ++i) {
      f += coef[i] * rbf_kernel(std::span<const double>(support.row(i).data(), x.size()), x, gamma);
    }
    return f;
  }
};

namespace detail {

inline RowMatrix kernel_matrix(const RowMatrix& x, double gamma) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  RowMatrix k = x * x.transpose();
  for (Eigen::Index i = 0; i < k.rows(); ++i)
    for (Eigen::Index j = 0; j < k.cols(); ++j) k(i, j) = std::exp(-gamma * std::max(0.0, sq[i] + sq[j] - 2.0 * k(i, j)));
  return k;
}

inline void check_rows(const RowMatrix& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x.data()[i])) throw NumericError("SVM input contains a non-finite value");
}

}  // namespace detail

/// SMO on the dual with labels in {−1, +1}. Second index drawn at random
/// from a seeded generator, falling back to a full scan when that pair
/// makes no progress; stops after a sweep without any update.
inline BinarySvm svm_train_binary(const RowMatrix& x, std::span<const int> y, const SvmConfig& cfg = {}) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x.rows());
  if (n != y.size()) throw DimensionError("SVM: " + std::to_string(n) + " rows vs " + std::to_string(y.size()) + " labels");
  if (n < 2) throw DataError("SVM needs at least 2 training rows");
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == -1) neg = true;
    else throw LabelError("binary SVM labels must be -1 or +1");
  }
  if (!pos || !neg) throw LabelError("binary SVM needs both labels present");
  detail::check_rows(x);

  const double gamma = cfg.gamma > 0.0 ? cfg.gamma : scale_gamma(x);
  const double c = cfg.c;
  const RowMatrix k = detail::kernel_matrix(x, gamma);
  std::vector<double> alpha(n, 0.0);
  double b = 0.0;
  // error cache E_i = f(x_i) − y_i with f excluding b
  std::vector<double> f(n, 0.0);
  const auto err = [&](std::size_t i) { return f[i] + b - y[i]; };
  std::mt19937_64 rng(cfg.seed);

  const auto take_step = [&](std::size_t i, std::size_t j) -> bool {
    if (i == j) return false;
    const double yi = y[i], yj = y[j];
    const double ei = err(i), ej = err(j);
    const double ai = alpha[i], aj = alpha[j];
    double lo, hi;
    if (yi != yj) {
      lo = std::max(0.0, aj - ai);
      hi = std::min(c, c + aj - ai);
    } else {
      lo = std::max(0.0, ai + aj - c);
      hi = std::min(c, ai + aj);
    }
    if (hi - lo < 1e-12) return false;
    const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
    const double eta = 2.0 * k(ii, jj) - k(ii, ii) - k(jj, jj);
    if (eta >= -1e-12) return false;
    double aj_new = std::clamp(aj - yj * (ei - ej) / eta, lo, hi);
    if (std::abs(aj_new - aj) < 1e-5 * (aj_new + aj + 1e-5)) return false;
    double ai_new = ai + yi * yj * (aj - aj_new);
    if (ai_new < 1e-12) ai_new = 0.0;
    else if (ai_new > c - 1e-12) ai_new = c;
    const double dai = ai_new - ai, daj = aj_new - aj;
    const double b1 = b - ei - yi * dai * k(ii, ii) - yj * daj * k(ii, jj);
    const double b2 = b - ej - yi * dai * k(ii, jj) - yj * daj * k(jj, jj);
    double b_new;
    if (ai_new > 0.0 && ai_new < c) b_new = b1;
    else if (aj_new > 0.0 && aj_new < c) b_new = b2;
    else b_new = 0.5 * (b1 + b2);
    alpha[i] = ai_new;
    alpha[j] = aj_new;
    for (std::size_t t = 0; t < n; ++t) {
      const auto tt = static_cast<Eigen::Index>(t);
      f[t] += yi * dai * k(ii, tt) + yj * daj * k(jj, tt);
    }
    b = b_new;
    return true;
  };

  std::uniform_int_distribution<std::size_t> pick(0, n - 2);
  for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = err(i) * y[i];
      if (!((r < -cfg.tol && alpha[i] < c) || (r > cfg.tol && alpha[i] > 0.0))) continue;
      std::size_t j = pick(rng);
      if (j >= i) ++j;
      if (take_step(i, j)) {
        ++changed;
        continue;
      }
      const std::size_t offset = pick(rng);
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t jj = (offset + s) % n;
        if (take_step(i, jj)) {
          ++changed;
          break;
        }
      }
    }
    if (changed == 0) break;
  }

  BinarySvm model;
  model.gamma = gamma;
  model.c = c;
  model.bias = b;
  std::vector<std::size_t> sv;
  for (std::size_t i = 0; i < n; ++i)
    if (alpha[i] > 0.0) sv.push_back(i);
  model.support.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  model.coef.resize(static_cast<Eigen::Index>(sv.size()));
  model.alpha.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    const auto ss = static_cast<Eigen::Index>(s);
    model.support.row(ss) = x.row(static_cast<Eigen::Index>(sv[s]));
    model.alpha[ss] = alpha[sv[s]];
    model.coef[ss] = alpha[sv[s]] * y[sv[s]];
  }
  model.support_index = std::move(sv);
  return model;
}

/// Largest KKT residual of a trained machine on its training data:
/// α=0 needs y·f ≥ 1, α=C needs y·f ≤ 1, otherwise y·f = 1.
inline double max_kkt_violation(const BinarySvm& m, const RowMatrix& x, std::span<const int> y) {
  std::vector<double> alpha(static_cast<std::size_t>(x.rows()), 0.0);
  for (std::size_t s = 0; s < m.support_index.size(); ++s) alpha[m.support_index[s]] = m.alpha[static_cast<Eigen::Index>(s)];
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double yf = y[static_cast<std::size_t>(i)] * m.decision(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
    const double a = alpha[static_cast<std::size_t>(i)];
    double v;
    if (a <= 0.0) v = std::max(0.0, 1.0 - yf);
    else if (a >= m.c) v = std::max(0.0, yf - 1.0);
    else v = std::abs(yf - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

/// Σ αᵢ·yᵢ over the support vectors.
inline double dual_balance(const BinarySvm& m) { return m.coef.sum(); }

/// K=2: one machine, class 1 is the positive side. K>2: one-vs-rest.
struct SvmModel {
  std::size_t n_classes = 0;
  std::vector<BinarySvm> machines;

  std::size_t input_dim() const { return machines.empty() ? 0 : static_cast<std::size_t>(machines[0].support.cols()); }
};

inline SvmModel svm_train_multiclass(const RowMatrix& x, std::span<const std::size_t> labels, std::size_t n_classes,
                                     const SvmConfig& cfg = {}, std::size_t threads = 1) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw DimensionError("SVM: " + std::to_string(x.rows()) + " rows vs " + std::to_string(labels.size()) + " labels");
  }
  if (n_classes < 2) throw ConfigError("SVM needs at least two classes");
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t l : labels) {
    if (l >= n_classes) throw LabelError("SVM label " + std::to_string(l) + " out of range");
    ++counts[l];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) throw DataError("SVM training data has no example of class " + std::to_string(c));
  }
  SvmConfig shared = cfg;
  if (shared.gamma <= 0.0) shared.gamma = scale_gamma(x);

  SvmModel model;
  model.n_classes = n_classes;
  const std::size_t n_machines = n_classes == 2 ? 1 : n_classes;
  model.machines.resize(n_machines);
  run_indexed(n_machines, threads, [&](std::size_t m) {
    const std::size_t positive = n_classes == 2 ? 1 : m;
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == positive ? 1 : -1;
    SvmConfig mc = shared;
    mc.seed = shared.seed + m;
    model.machines[m] = svm_train_binary(x, y, mc);
  });
  return model;
}

inline std::vector<double> decision_values(const SvmModel& model, std::span<const double> row) {
  std::vector<double> out;
  for (const BinarySvm& m : model.machines) out.push_back(m.decision(row));
  return out;
}

inline std::vector<std::size_t> svm_predict(const SvmModel& model, const RowMatrix& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim()) {
    throw DimensionError("SVM expects " + std::to_string(model.input_dim()) + " features, got " +
                         std::to_string(x.cols()));
  }
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const std::vector<double> d =
        decision_values(model, std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
    if (model.n_classes == 2) out.push_back(d[0] > 0.0 ? 1 : 0);
    else out.push_back(metrics::argmax_lowest(d));
  }
  return out;
}

}  // namespace adaptune::svm
