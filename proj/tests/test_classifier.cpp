#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "adaptune/classifier.hpp"
#include "test_support.hpp"

namespace adaptune::classifier {
namespace {

using adaptune::testing::random_tensor;

TEST(Adam, FirstTwoStepsByHand) {
  Tensor p = Tensor::vector({1.0, -2.0});
  std::vector<Tensor*> params = {&p};
  AdamState state;
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(params, std::vector<Tensor>{Tensor::vector({0.5, -4.0})}, state, cfg, 1);
  // step 1: m̂ = g, v̂ = g², update lr·g/(|g| + eps)
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);

  const double g2 = 0.25;
  adam_step(params, std::vector<Tensor>{Tensor::vector({g2, 0.0})}, state, cfg, 2);
  const double m = 0.9 * 0.05 + 0.1 * g2, v = 0.999 * 0.00025 + 0.001 * g2 * g2;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
}

TEST(Adam, Errors) {
  Tensor p = Tensor::vector({1.0});
  std::vector<Tensor*> params = {&p};
  AdamState state;
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor::vector({1.0})}, state, {}, 0), StepIndexError);
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor::vector({1.0, 2.0})}, state, {}, 1), DimensionError);
}

encoder::EncoderConfig tiny_config() {
  encoder::EncoderConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_mels = 6;
  c.max_frames = 12;
  c.seed = 5;
  return c;
}

PeftClassifier tiny_classifier(peft::Variant variant, std::size_t n_classes = 3) {
  const encoder::EncoderConfig c = tiny_config();
  peft::AdapterConfig ac;
  ac.variant = variant;
  ac.rank = 2;
  return make_classifier(peft::attach_adapters(encoder::init_weights(c), c, ac, 17), n_classes);
}

/// Each class has its own mean frame, plus noise.
std::vector<Example> toy_examples(std::size_t per_class, std::size_t n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Tensor f = random_tensor({6, 6}, rng, 0.3);
      for (std::size_t t = 0; t < 6; ++t) f.at(t, c) += 1.5;
      out.push_back({"c" + std::to_string(c) + "_" + std::to_string(100 + i), f, c});
    }
  }
  return out;
}

class VariantTest : public ::testing::TestWithParam<peft::Variant> {};

TEST_P(VariantTest, LossDecreasesAndBaseStaysFrozen) {
  PeftClassifier clf = tiny_classifier(GetParam());
  const encoder::EncoderWeights base = clf.model.base;
  const std::vector<Example> data = toy_examples(8, 3, 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 15;
  cfg.batch_size = 4;
  const TrainResult r = train(data, clf, cfg);
  ASSERT_EQ(r.epoch_loss.size(), 15u);
  EXPECT_EQ(r.steps, 15u * 6u);
  EXPECT_LT(r.epoch_loss.back(), 0.5 * r.epoch_loss.front());
  EXPECT_NEAR(r.epoch_loss.front(), std::log(3.0), 0.2);
  EXPECT_TRUE(clf.model.base == base);
  EXPECT_GE(evaluate(clf, data).accuracy, 0.9);
}

TEST_P(VariantTest, ZeroLearningRateChangesNothing) {
  PeftClassifier clf = tiny_classifier(GetParam());
  const PeftClassifier before = clf;
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  train(toy_examples(4, 3, 2), clf, cfg);
  EXPECT_TRUE(clf.head == before.head);
  for (std::size_t l = 0; l < clf.model.adapters.size(); ++l) EXPECT_TRUE(clf.model.adapters[l] == before.model.adapters[l]);
}

TEST_P(VariantTest, TrainingIsDeterministicAndStepCapped) {
  const std::vector<Example> data = toy_examples(5, 3, 3);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 10;
  cfg.max_steps = 7;
  cfg.seed = 4;
  PeftClassifier a = tiny_classifier(GetParam()), b = tiny_classifier(GetParam());
  const TrainResult ra = train(data, a, cfg);
  train(data, b, cfg);
  EXPECT_EQ(ra.steps, 7u);
  EXPECT_TRUE(a.head == b.head);
  EXPECT_TRUE(a.model.adapters == b.model.adapters);
}

TEST_P(VariantTest, PredictorMatchesAdaptedPath) {
  PeftClassifier clf = tiny_classifier(GetParam());
  TrainConfig cfg;
  cfg.learning_rate = 5e-2;
  cfg.epochs = 3;
  const std::vector<Example> data = toy_examples(4, 3, 5);
  train(data, clf, cfg);
  const Predictor p(clf);
  for (const Example& ex : data) {
    const Tensor direct = pool_and_classify(peft::adapted_forward(clf.model, ex.features), clf.head);
    EXPECT_LE(max_abs_diff(p.logits(ex.features), direct), 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Both, VariantTest, ::testing::Values(peft::Variant::lora, peft::Variant::dora),
                         [](const auto& info) { return peft::to_string(info.param); });

TEST(Train, RejectsBadInput) {
  PeftClassifier clf = tiny_classifier(peft::Variant::lora, 2);
  std::vector<Example> data = toy_examples(2, 3, 1);  // label 2 with a 2-class head
  EXPECT_THROW(train(data, clf, {}), LabelError);
  EXPECT_THROW(train(std::vector<Example>{}, clf, {}), DataError);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(train(toy_examples(2, 2, 1), clf, bad), ConfigError);
}

TEST(CrossValidation, FoldsSelectionAndDeterminism) {
  const std::vector<Example> pooled = toy_examples(10, 3, 8);
  const PeftClassifier initial = tiny_classifier(peft::Variant::lora);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 2;
  cfg.seed = 11;
  const auto cv = cross_validate(pooled, initial, cfg, 5, 2);
  ASSERT_EQ(cv.folds.size(), 5u);
  ASSERT_EQ(cv.models.size(), 5u);
  std::vector<std::string> all;
  for (const FoldResult& f : cv.folds) {
    EXPECT_EQ(f.validation_ids.size(), 6u);
    EXPECT_EQ(f.metrics.confusion.total(), 6u);
    all.insert(all.end(), f.validation_ids.begin(), f.validation_ids.end());
  }
  std::sort(all.begin(), all.end());
  EXPECT_EQ(std::unique(all.begin(), all.end()), all.end());
  EXPECT_EQ(all.size(), 30u);
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < 5; ++i)
    if (cv.folds[i].metrics.macro_f1 > best) {
      best = cv.folds[i].metrics.macro_f1;
      arg = i;
    }
  EXPECT_EQ(cv.selected, arg);

  const auto again = cross_validate(pooled, initial, cfg, 5, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(again.folds[i].validation_ids, cv.folds[i].validation_ids);
    EXPECT_EQ(again.folds[i].metrics.confusion, cv.folds[i].metrics.confusion);
    EXPECT_TRUE(again.models[i].head == cv.models[i].head);
  }
}

TEST(CrossValidation, SelectionTiesGoToLowestFold) {
  std::vector<FoldResult> folds(4);
  const std::vector<double> scores = {0.5, 0.8, 0.8, 0.2};
  for (std::size_t i = 0; i < 4; ++i) folds[i].metrics.macro_f1 = scores[i];
  EXPECT_EQ(select_fold(folds), 1u);
}

}  // namespace
}  // namespace adaptune::classifier
