#pragma once

// Training and evaluation of a frozen encoder + adapters + linear head, and
// the k-fold cross-validation harness with macro-F1 model selection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "adaptune/adam.hpp"
#include "adaptune/data/folds.hpp"
#include "adaptune/encoder.hpp"
#include "adaptune/error.hpp"
#include "adaptune/head.hpp"
#include "adaptune/metrics.hpp"
#include "adaptune/ndgrad.hpp"
#include "adaptune/parallel.hpp"
#include "adaptune/peft.hpp"

namespace adaptune::classifier {

struct TrainConfig {
  double learning_rate = 8e-5;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps; 0 runs every epoch to completion.
  std::size_t max_steps = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning rate must be a finite non-negative number");
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  }

  AdamConfig adam() const { return AdamConfig{learning_rate, 0.9, 0.999, 1e-8}; }
};

/// One utterance ready for the encoder: T×n_mels features and a class index.
struct Example {
  std::string id;
  Tensor features;
  std::size_t label = 0;
};

struct PeftClassifier {
  peft::AdaptedModel model;
  ClassifierHead head;
};

inline PeftClassifier make_classifier(peft::AdaptedModel model, std::size_t n_classes) {
  ClassifierHead head = ClassifierHead::zeros(model.encoder_config.d_model, n_classes);
  return {std::move(model), std::move(head)};
}

/// Trainable tensors in the order matching the gradients from `batch_loss`.
inline std::vector<Tensor*> trainable_tensors(PeftClassifier& clf) {
  std::vector<Tensor*> out = peft::trainable_tensors(clf.model);
  out.push_back(&clf.head.weight);
  out.push_back(&clf.head.bias);
  return out;
}

/// Mean cross-entropy of a batch on a fresh graph, plus gradients of every
/// trainable tensor (same order as `trainable_tensors`).
struct BatchLoss {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

inline BatchLoss batch_loss(const PeftClassifier& clf, std::span<const Example* const> batch, bool with_grad = true) {
  if (batch.empty()) throw DataError("empty batch");
  grad::Graph g;
  peft::BoundModel bm = peft::bind(g, clf.model, with_grad);
  HeadVars hv{with_grad ? g.parameter(clf.head.weight) : g.constant(clf.head.weight),
              with_grad ? g.parameter(clf.head.bias) : g.constant(clf.head.bias)};
  std::vector<grad::Var> losses;
  losses.reserve(batch.size());
  for (const Example* ex : batch) {
    if (ex->label >= clf.head.n_classes()) {
      throw LabelError("example '" + ex->id + "' has label " + std::to_string(ex->label) + " but the head has " +
                       std::to_string(clf.head.n_classes()) + " classes");
    }
    grad::Var hidden = encoder::encoder_forward(g, bm.encoder, ex->features, clf.model.encoder_config);
    losses.push_back(grad::cross_entropy(pool_and_classify(hidden, hv), ex->label));
  }
  grad::Var total = grad::scale(grad::add_n(losses), 1.0 / static_cast<double>(batch.size()));
  BatchLoss out;
  out.loss = g.value(total)[0];
  if (!std::isfinite(out.loss)) throw NumericError("loss became non-finite");
  if (!with_grad) return out;
  g.backward(total);
  for (const grad::Var& v : peft::trainable_vars(bm, clf.model.config.variant)) out.grads.push_back(g.grad(v));
  out.grads.push_back(g.grad(hv.weight));
  out.grads.push_back(g.grad(hv.bias));
  return out;
}

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::size_t steps = 0;
};

/// Mini-batch Adam over adapters + head; the base encoder is never written.
/// Epoch order comes from a generator seeded with `cfg.seed`.
inline TrainResult train(std::span<const Example> examples, PeftClassifier& clf, const TrainConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw DataError("training set is empty");
  for (const Example& ex : examples) {
    if (ex.label >= clf.head.n_classes()) {
      throw LabelError("example '" + ex.id + "' has label " + std::to_string(ex.label) + " >= " +
                       std::to_string(clf.head.n_classes()));
    }
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  AdamState state;
  const AdamConfig adam = cfg.adam();
  std::vector<Tensor*> params = trainable_tensors(clf);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) break;
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&examples[order[i]]);
      }
      BatchLoss bl = batch_loss(clf, batch);
      adam_step(params, bl.grads, state, adam, ++result.steps);
      loss_sum += bl.loss;
      ++n_batches;
    }
    if (n_batches == 0) break;
    result.epoch_loss.push_back(loss_sum / static_cast<double>(n_batches));
    if (cfg.max_steps && result.steps >= cfg.max_steps) break;
  }
  return result;
}

/// Inference through merged weights (equivalent to the adapted path).
class Predictor {
 public:
  explicit Predictor(const PeftClassifier& clf)
      : config_(clf.model.encoder_config), weights_(peft::merge(clf.model)), head_(clf.head) {}

  Tensor logits(const Tensor& features) const {
    return pool_and_classify(encoder::encoder_forward(features, weights_, config_), head_);
  }

  std::size_t predict(const Tensor& features) const {
    const Tensor z = logits(features);
    return metrics::argmax_lowest(z.data());
  }

 private:
  encoder::EncoderConfig config_;
  encoder::EncoderWeights weights_;
  ClassifierHead head_;
};

inline std::vector<std::size_t> predict_labels(const PeftClassifier& clf, std::span<const Example> examples) {
  Predictor p(clf);
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) out.push_back(p.predict(ex.features));
  return out;
}

inline metrics::MetricsReport evaluate(const PeftClassifier& clf, std::span<const Example> examples) {
  std::vector<std::size_t> labels;
  for (const Example& ex : examples) labels.push_back(ex.label);
  const std::vector<std::size_t> preds = predict_labels(clf, examples);
  return metrics::evaluate(preds, labels, clf.head.n_classes());
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldResult {
  std::size_t fold = 0;
  metrics::MetricsReport metrics;
  std::vector<std::string> validation_ids;
  std::string checkpoint;  // filled in by callers that persist models
};

template <class Model>
struct CrossValidation {
  std::vector<FoldResult> folds;
  std::size_t selected = 0;
  std::vector<Model> models;  // one per fold

  const Model& selected_model() const { return models.at(selected); }
};

/// Index of the fold with the highest macro-F1, lowest index on ties.
inline std::size_t select_fold(std::span<const FoldResult> folds) {
  std::vector<double> scores;
  for (const FoldResult& f : folds) scores.push_back(f.metrics.macro_f1);
  return metrics::argmax_lowest(scores);
}

/// Generic stratified k-fold driver. `fit(train_indices)` returns a model and
/// `predict(model, validation_indices)` its predicted classes. Folds are
/// independent and may run on `threads` workers; results are ordered by fold.
template <class Fit, class Predict>
auto cross_validate_with(std::span<const std::string> ids, std::span<const std::size_t> labels,
                         std::size_t n_classes, std::size_t k, std::uint64_t seed, Fit fit, Predict predict,
                         std::size_t threads = 1) {
  using Model = std::invoke_result_t<Fit, const std::vector<std::size_t>&>;
  const std::vector<std::size_t> assignment = data::stratified_folds(ids, labels, k, seed);
  CrossValidation<Model> cv;
  cv.folds.resize(k);
  std::vector<std::optional<Model>> models(k);
  run_indexed(k, threads, [&](std::size_t fold) {
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < assignment.size(); ++i) (assignment[i] == fold ? val_idx : train_idx).push_back(i);
    Model model = fit(train_idx);
    const std::vector<std::size_t> preds = predict(model, val_idx);
    std::vector<std::size_t> truth;
    FoldResult fr;
    fr.fold = fold;
    for (std::size_t i : val_idx) {
      truth.push_back(labels[i]);
      fr.validation_ids.push_back(ids[i]);
    }
    std::sort(fr.validation_ids.begin(), fr.validation_ids.end());
    fr.metrics = metrics::evaluate(preds, truth, n_classes);
    cv.folds[fold] = std::move(fr);
    models[fold] = std::move(model);
  });
  for (auto& m : models) cv.models.push_back(std::move(*m));
  cv.selected = select_fold(cv.folds);
  return cv;
}

/// k-fold cross-validation of adapter fine-tuning. Every fold starts from a
/// copy of `initial` and trains with `cfg`.
inline CrossValidation<PeftClassifier> cross_validate(std::span<const Example> pooled, const PeftClassifier& initial,
                                                      const TrainConfig& cfg, std::size_t k = 5,
                                                      std::size_t threads = 1) {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  for (const Example& ex : pooled) {
    ids.push_back(ex.id);
    labels.push_back(ex.label);
  }
  auto fit = [&](const std::vector<std::size_t>& train_idx) {
    std::vector<Example> subset;
    for (std::size_t i : train_idx) subset.push_back(pooled[i]);
    PeftClassifier clf = initial;
    train(subset, clf, cfg);
    return clf;
  };
  auto predict = [&](const PeftClassifier& clf, const std::vector<std::size_t>& val_idx) {
    Predictor p(clf);
    std::vector<std::size_t> out;
    for (std::size_t i : val_idx) out.push_back(p.predict(pooled[i].features));
    return out;
  };
  return cross_validate_with(ids, labels, initial.head.n_classes(), k, cfg.seed, fit, predict, threads);
}

}  // namespace adaptune::classifier
