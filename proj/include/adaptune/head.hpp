#pragma once

#include <cstddef>
#include <string>

#include "adaptune/error.hpp"
#include "adaptune/ndgrad.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::classifier {

/// Linear classification layer on top of the mean-pooled encoder output.
struct ClassifierHead {
  Tensor weight;  // d_model × C
  Tensor bias;    // C

  std::size_t n_classes() const { return bias.size(); }
  std::size_t input_dim() const { return weight.rows(); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  /// Zero weights and bias, so every class starts with logit 0.
  static ClassifierHead zeros(std::size_t d_model, std::size_t n_classes) {
    if (n_classes < 2) throw ConfigError("classifier needs at least two classes");
    return {Tensor::zeros({d_model, n_classes}), Tensor::zeros({n_classes})};
  }

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

struct HeadVars {
  grad::Var weight;
  grad::Var bias;
};

/// mean over frames of hidden (T×d), then ·W + b. Returns 1×C logits.
inline grad::Var pool_and_classify(grad::Var hidden, const HeadVars& head) {
  if (hidden.shape().size() != 2 || hidden.shape()[0] == 0) {
    throw DataError("pooling needs at least one frame");
  }
  return grad::add_bias(grad::matmul(grad::mean_rows(hidden), head.weight), head.bias);
}

inline Tensor pool_and_classify(const Tensor& hidden, const ClassifierHead& head) {
  if (hidden.empty() || hidden.rank() != 2) throw DataError("pooling needs a non-empty T×d matrix");
  if (hidden.cols() != head.input_dim()) {
    throw DimensionError("hidden width " + std::to_string(hidden.cols()) + " does not match head input " +
                         std::to_string(head.input_dim()));
  }
  grad::Graph g;
  grad::Var logits = pool_and_classify(g.constant(hidden), HeadVars{g.constant(head.weight), g.constant(head.bias)});
  return Tensor::vector(g.value(logits).values());
}

}  // namespace adaptune::classifier
