// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaptune/allocator.hpp"
#include "adaptune/checkpoint.hpp"
#include "adaptune/classifier.hpp"
#include "adaptune/data/synth.hpp"
#include "adaptune/features/logmel.hpp"
#include "adaptune/metrics.hpp"
#include "adaptune/model_io.hpp"
#include "adaptune/peft.hpp"
#include "adaptune/pipeline.hpp"
#include "adaptune/svm.hpp"

namespace {

using namespace adaptune;
namespace fs = std::filesystem;

// Desk-scale learning rate of the end-to-end runs.
constexpr double kDeskLearningRate = 1e-3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = n(rng);
  return t;
}

peft::AdaptedModel desk_model(peft::Variant v, std::uint64_t seed = 1) {
  const encoder::EncoderConfig c;
  peft::AdapterConfig ac;
  ac.variant = v;
  return peft::attach_adapters(encoder::init_weights(c), c, ac, seed);
}

std::vector<classifier::Example> random_examples(std::size_t n, std::size_t frames, std::size_t n_mels,
                                                 std::size_t n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<classifier::Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % n_classes;
    Tensor x = random_tensor({frames, n_mels}, rng);
    for (std::size_t t = 0; t < frames; ++t) x.at(t, label) += 2.0;
    out.push_back({"ex" + std::to_string(i), std::move(x), label});
  }
  return out;
}

double merge_deviation(const peft::AdaptedModel& m, std::uint64_t seed) {
  const encoder::EncoderWeights merged = peft::merge(m);
  std::mt19937_64 rng(seed);
  double dev = 0.0;
  for (int i = 0; i < 16; ++i) {
    const Tensor x = random_tensor({32, m.encoder_config.n_mels}, rng);
    dev = std::max(dev, max_abs_diff(peft::adapted_forward(m, x), encoder::encoder_forward(x, merged, m.encoder_config)));
  }
  return dev;
}

// ---------------------------------------------------------------------------

Outcome zero_init_identity() {
  double worst = 0.0;
  for (peft::Variant v : {peft::Variant::lora, peft::Variant::dora}) {
    const auto clf = classifier::make_classifier(desk_model(v), 4);
    std::mt19937_64 rng(11);
    const classifier::ClassifierHead random_head{random_tensor({64, 4}, rng), random_tensor({4}, rng)};
    for (int i = 0; i < 16; ++i) {
      const Tensor x = random_tensor({32, 80}, rng);
      const Tensor base_hidden = encoder::encoder_forward(x, clf.model.base, clf.model.encoder_config);
      const Tensor adapted_hidden = peft::adapted_forward(clf.model, x);
      worst = std::max(worst, max_abs_diff(classifier::pool_and_classify(adapted_hidden, clf.head),
                                           classifier::pool_and_classify(base_hidden, classifier::ClassifierHead::zeros(64, 4))));
      worst = std::max(worst, max_abs_diff(classifier::pool_and_classify(adapted_hidden, random_head),
                                           classifier::pool_and_classify(base_hidden, random_head)));
    }
  }
  return {worst <= 1e-12, fmt("max |logit difference| = %.3e over 16 inputs, both variants", worst)};
}

Outcome merge_equivalence() {
  double before = 0.0, after = 0.0;
  for (peft::Variant v : {peft::Variant::lora, peft::Variant::dora}) {
    auto clf = classifier::make_classifier(desk_model(v), 4);
    before = std::max(before, merge_deviation(clf.model, 21));
    const auto data = random_examples(32, 16, 80, 4, 5);
    classifier::TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.epochs = 1000;
    tc.max_steps = 100;
    tc.seed = 3;
    const auto r = classifier::train(data, clf, tc);
    if (r.steps != 100) return {false, "training stopped after " + std::to_string(r.steps) + " steps"};
    after = std::max(after, merge_deviation(clf.model, 22));
  }
  return {before <= 1e-10 && after <= 1e-10,
          fmt("max deviation %.3e at init, %.3e after 100 steps, both variants", before, after)};
}

Outcome dora_decomposition() {
  std::mt19937_64 rng(31);
  const Tensor w0 = random_tensor({64, 48}, rng), a = random_tensor({8, 48}, rng), b = random_tensor({64, 8}, rng);
  const Tensor dir = peft::dora_direction(w0, a, b);
  double norm_err = 0.0;
  const Tensor norms = peft::column_norms(dir);
  for (double n : norms.values()) norm_err = std::max(norm_err, std::abs(n - 1.0));
  Tensor m = random_tensor({48}, rng);
  for (double& v : m.values()) v = std::abs(v) + 0.5;
  const Tensor w = peft::dora_effective_weight(w0, a, b, m);
  double scale_err = 0.0;
  for (const double alpha : {0.5, 3.0, -2.0}) {
    for (std::size_t col : {0u, 17u, 47u}) {
      Tensor m2 = m;
      m2[col] *= alpha;
      const Tensor w2 = peft::dora_effective_weight(w0, a, b, m2);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        for (std::size_t c = 0; c < w.cols(); ++c) {
          const double expect = c == col ? alpha * w.at(r, c) : w.at(r, c);
          scale_err = std::max(scale_err, std::abs(w2.at(r, c) - expect) / std::max(std::abs(expect), 1e-300));
        }
      }
    }
  }
  return {norm_err <= 1e-9 && scale_err <= 1e-12,
          fmt("max |column norm - 1| = %.3e, max relative column-scaling error = %.3e", norm_err, scale_err)};
}

Outcome gradient_correctness() {
  double worst = 0.0;
  for (peft::Variant v : {peft::Variant::lora, peft::Variant::dora}) {
    encoder::EncoderConfig c;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_model = 32;
    c.d_ff = 64;
    c.n_mels = 16;
    c.max_frames = 8;
    c.seed = 41;
    peft::AdapterConfig ac;
    ac.variant = v;
    ac.rank = 2;
    peft::AdaptedModel m = peft::attach_adapters(encoder::init_weights(c), c, ac, 42);
    std::mt19937_64 rng(43);
    for (Tensor* t : peft::trainable_tensors(m))
      for (double& x : t->values()) x += std::normal_distribution<double>(0.0, 0.1)(rng);
    const Tensor x = random_tensor({8, 16}, rng);
    std::vector<Tensor> params;
    for (Tensor* t : peft::trainable_tensors(m)) params.push_back(*t);
    params.push_back(random_tensor({32, 4}, rng, 0.1));
    params.push_back(random_tensor({4}, rng, 0.1));
    const std::size_t per = v == peft::Variant::dora ? 3 : 2;
    auto f = [&](grad::Graph& g, std::span<const grad::Var> p) {
      encoder::EncoderVars ev = encoder::bind_frozen(g, m.base);
      for (std::size_t l = 0; l < m.adapters.size(); ++l) {
        grad::Var* slots[3] = {&ev.layers[l].wq, &ev.layers[l].wk, &ev.layers[l].wv};
        for (std::size_t t = 0; t < 3; ++t) {
          const std::size_t k = (l * 3 + t) * per;
          *slots[t] = v == peft::Variant::dora ? peft::dora_effective_weight(*slots[t], p[k], p[k + 1], p[k + 2], ac.scale)
                                               : peft::lora_effective_weight(*slots[t], p[k], p[k + 1], ac.scale);
        }
      }
      const grad::Var h = encoder::encoder_forward(g, ev, x, c);
      return grad::cross_entropy(classifier::pool_and_classify(h, {p[p.size() - 2], p[p.size() - 1]}), 2);
    };
    worst = std::max(worst, grad::grad_check(f, params).max_rel_error);
  }
  return {worst <= 1e-4, fmt("max relative error %.3e over A, B, m, W_fc, b (both variants)", worst)};
}

Outcome frozen_base_invariance() {
  bool frozen_ok = true, moved = true;
  for (peft::Variant v : {peft::Variant::lora, peft::Variant::dora}) {
    auto clf = classifier::make_classifier(desk_model(v), 4);
    const auto base_bytes = ckpt::serialize(model_io::encoder_checkpoint(clf.model.base, clf.model.encoder_config));
    const auto adapter_bytes = ckpt::serialize(model_io::adapter_checkpoint(clf));
    classifier::TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.epochs = 1000;
    tc.max_steps = 200;
    tc.seed = 5;
    classifier::train(random_examples(32, 16, 80, 4, 6), clf, tc);
    frozen_ok = frozen_ok && ckpt::serialize(model_io::encoder_checkpoint(clf.model.base, clf.model.encoder_config)) == base_bytes;
    moved = moved && ckpt::serialize(model_io::adapter_checkpoint(clf)) != adapter_bytes;
  }
  return {frozen_ok && moved, std::string("base bytes ") + (frozen_ok ? "unchanged" : "CHANGED") +
                                  ", adapters " + (moved ? "updated" : "NOT updated") + " after 200 steps"};
}

Outcome parameter_budget() {
  const encoder::EncoderConfig c;
  const std::size_t d = c.d_model, r = peft::AdapterConfig{}.rank, targets = 3 * c.n_layers, classes = 4;
  const std::size_t factors = targets * r * (d + d), mags = targets * d, head = d * classes + classes;
  bool ok = true;
  double ratio_max = 0.0;
  for (peft::Variant v : {peft::Variant::lora, peft::Variant::dora}) {
    auto clf = classifier::make_classifier(desk_model(v), classes);
    const auto rep = peft::trainable_parameter_report(clf.model, clf.head);
    std::size_t counted = 0;
    for (Tensor* t : classifier::trainable_tensors(clf)) counted += t->size();
    const std::size_t expect = factors + (v == peft::Variant::dora ? mags : 0) + head;
    const std::size_t frozen = encoder::count_parameters(clf.model.base).total;
    ok = ok && rep.trainable == expect && counted == expect && rep.frozen == frozen && rep.total == frozen + expect &&
         rep.ratio < 0.15;
    ratio_max = std::max(ratio_max, rep.ratio);
  }
  return {ok, fmt("LoRA %.0f + head %.0f, DoRA adds %.0f; max trainable/total = %.4f", double(factors), double(head),
                  double(mags), ratio_max)};
}

// Shared synthetic corpus and end-to-end runs.
struct Corpus {
  fs::path dir;
  fs::path manifest;
};

pipeline::RunConfig run_config(const Corpus& corpus, pipeline::Variant v, data::Task task, const std::string& name) {
  pipeline::RunConfig c;
  c.manifest = corpus.manifest.string();
  c.out = (corpus.dir / "runs" / name).string();
  c.task = task;
  c.variant = v;
  c.seed = 7;
  if (pipeline::is_peft(v)) c.adapter.variant = v == pipeline::Variant::lora ? peft::Variant::lora : peft::Variant::dora;
  c.train.learning_rate = kDeskLearningRate;
  c.train.epochs = 30;
  return c;
}

struct EndToEnd {
  double lora = 0.0, dora = 0.0, frozen = 0.0, seconds = 0.0;
};

EndToEnd end_to_end(const Corpus& corpus) {
  std::ostringstream log;
  EndToEnd e;
  const auto t0 = std::chrono::steady_clock::now();
  e.lora = pipeline::cmd_train(run_config(corpus, pipeline::Variant::lora, data::Task::severity, "lora"), log).eval.macro_f1;
  e.dora = pipeline::cmd_train(run_config(corpus, pipeline::Variant::dora, data::Task::severity, "dora"), log).eval.macro_f1;
  auto frozen = run_config(corpus, pipeline::Variant::lora, data::Task::severity, "frozen");
  frozen.train.learning_rate = 0.0;
  e.frozen = pipeline::cmd_train(frozen, log).eval.macro_f1;
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return e;
}

Outcome end_to_end_learning(const EndToEnd& e) {
  return {e.lora >= 0.90 && e.dora >= 0.90 && e.frozen <= 0.40 && e.seconds < 600.0,
          fmt("eval macro-F1 lora %.4f, dora %.4f, frozen control %.4f; %.0f s", e.lora, e.dora, e.frozen, e.seconds)};
}

Outcome baseline_pipeline(const Corpus& corpus, const EndToEnd& e) {
  std::ostringstream log;
  const auto detect = pipeline::cmd_train(run_config(corpus, pipeline::Variant::baseline_svm, data::Task::detect, "svm_detect"), log);
  const auto severity =
      pipeline::cmd_train(run_config(corpus, pipeline::Variant::baseline_svm, data::Task::severity, "svm_severity"), log);
  const double margin = e.lora - severity.eval.macro_f1;
  return {detect.eval.accuracy >= 0.80 && margin >= 0.05,
          fmt("SVM detection accuracy %.4f; 4-class macro-F1 SVM %.4f vs lora %.4f (margin %.4f)", detect.eval.accuracy,
              severity.eval.macro_f1, e.lora, margin)};
}

Outcome metrics_oracle() {
  const std::vector<std::size_t> preds = {0, 1, 1}, labels = {0, 1, 0};
  const metrics::ConfusionMatrix m = metrics::confusion(preds, labels, 2);
  const bool matrix_ok = m.to_rows() == std::vector<std::vector<std::size_t>>{{1, 1}, {0, 1}};
  // brute force: per-class counts straight from the pairs
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      tp += preds[i] == c && labels[i] == c;
      fp += preds[i] == c && labels[i] != c;
      fn += preds[i] != c && labels[i] == c;
    }
    const double p = tp / (tp + fp), r = tp / (tp + fn);
    f1_sum += 2 * p * r / (p + r);
  }
  const double f1 = metrics::macro_f1(m), acc = metrics::accuracy(m);
  const bool ok = matrix_ok && f1 == 2.0 / 3.0 && acc == 2.0 / 3.0 && std::abs(f1 - f1_sum / 2.0) <= 1e-15;
  return {ok, fmt("macro-F1 %.17g, accuracy %.17g, brute force %.17g", f1, acc, f1_sum / 2.0)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome cv_protocol(const Corpus& corpus) {
  std::ostringstream log;
  auto c1 = run_config(corpus, pipeline::Variant::baseline_svm, data::Task::severity, "cv1");
  auto c2 = run_config(corpus, pipeline::Variant::baseline_svm, data::Task::severity, "cv2");
  c2.threads = 2;
  pipeline::cmd_cv(c1, log);
  pipeline::cmd_cv(c2, log);
  const std::string a = slurp(fs::path(c1.out) / "folds.json"), b = slurp(fs::path(c2.out) / "folds.json");
  const bool identical = !a.empty() && a == b;

  std::map<std::string, data::Label> label_of;
  std::set<std::string> pooled;
  for (const auto& e : data::load_manifest(corpus.manifest)) {
    label_of[e.id] = e.label;
    if (e.split != data::Split::eval) pooled.insert(e.id);
  }
  const auto j = nlohmann::json::parse(a);
  std::set<std::string> seen;
  bool disjoint = true, balanced = true;
  std::vector<std::vector<std::size_t>> per_class(4, std::vector<std::size_t>(j["folds"].size(), 0));
  std::vector<double> scores;
  for (std::size_t k = 0; k < j["folds"].size(); ++k) {
    for (const auto& id : j["folds"][k]["validation_ids"]) {
      disjoint = disjoint && seen.insert(id.get<std::string>()).second;
      ++per_class[static_cast<std::size_t>(label_of.at(id.get<std::string>()))][k];
    }
    scores.push_back(j["folds"][k]["metrics"]["macro_f1"].get<double>());
  }
  for (const auto& sizes : per_class) {
    balanced = balanced && *std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1;
  }
  const bool partition = disjoint && seen == pooled && j["folds"].size() == 5;
  const bool selection = j["selected"].get<std::size_t>() == metrics::argmax_lowest(scores);
  std::vector<classifier::FoldResult> ties(5);
  for (auto& t : ties) t.metrics.macro_f1 = 0.5;
  const bool tie_rule = classifier::select_fold(ties) == 0;
  const bool ok = identical && partition && balanced && selection && tie_rule;
  return {ok, std::string("partition ") + (partition ? "ok" : "BAD") + ", per-class sizes " + (balanced ? "within 1" : "UNBALANCED") +
                  ", selection " + (selection && tie_rule ? "argmax/lowest" : "WRONG") + ", repeat run " +
                  (identical ? "byte-identical" : "DIFFERS")};
}

Outcome svm_solver() {
  RowMatrix x(4, 2);
  x << 0, 0, 1, 1, 0, 1, 1, 0;
  const std::vector<int> y = {-1, -1, 1, 1};
  svm::SvmConfig cfg;
  cfg.c = 10.0;
  cfg.gamma = 2.0;
  const svm::BinarySvm m = svm::svm_train_binary(x, y, cfg);
  int correct = 0;
  for (Eigen::Index i = 0; i < 4; ++i)
    correct += y[static_cast<std::size_t>(i)] * m.decision({x.row(i).data(), 2}) > 0.0;
  const double kkt = svm::max_kkt_violation(m, x, y), balance = std::abs(svm::dual_balance(m));
  return {correct == 4 && kkt <= 1e-3 && balance <= 1e-6,
          fmt("%.0f/4 correct, max KKT residual %.3e, |sum alpha*y| %.3e", correct, kkt, balance)};
}

Outcome dsp_contracts() {
  features::AudioClip one_second{std::vector<float>(16000, 0.0f), 16000};
  const Tensor silent = features::log_mel(one_second);
  bool floor_ok = silent.rows() == 98;
  for (double v : silent.values()) floor_ok = floor_ok && v == std::log(features::kLogFloor);

  std::mt19937_64 rng(51);
  std::normal_distribution<double> n(0.0, 0.1);
  features::AudioClip x{std::vector<float>(16000), 16000}, y{std::vector<float>(16000), 16000};
  const float alpha = 2.0f;
  for (std::size_t i = 0; i < 16000; ++i) {
    x.samples[i] = static_cast<float>(n(rng));
    y.samples[i] = alpha * x.samples[i];
  }
  const Tensor lx = features::log_mel(x), ly = features::log_mel(y);
  const double shift = std::log(double(alpha) * alpha);
  double shift_err = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    if (lx[i] > std::log(features::kLogFloor) && ly[i] > std::log(features::kLogFloor))
      shift_err = std::max(shift_err, std::abs(ly[i] - lx[i] - shift));
  }

  ckpt::Checkpoint c = model_io::encoder_checkpoint(encoder::init_weights({}), {});
  c.add("probe", random_tensor({3, 5}, rng));
  const auto bytes = ckpt::serialize(c);
  const ckpt::Checkpoint back = ckpt::deserialize(bytes);
  bool bit_exact = back.size() == c.size() && ckpt::serialize(back) == bytes;
  for (std::size_t e = 0; bit_exact && e < c.size(); ++e) {
    const auto& u = c.entries()[e].data;
    const auto& v = back.entries()[e].data;
    bit_exact = u.size() == v.size() && std::memcmp(u.data(), v.data(), u.size() * sizeof(double)) == 0;
  }
  return {silent.rows() == 98 && floor_ok && shift_err <= 1e-9 && bit_exact,
          fmt("%.0f frames for 1 s, max scaling-shift error %.3e", double(silent.rows()), shift_err) +
              ", silence " + (floor_ok ? "at the ln(1e-10) floor" : "NOT at floor") + ", checkpoint round-trip " +
              (bit_exact ? "bit-exact" : "DIFFERS")};
}

}  // namespace

int main() {
  adaptune::tune_allocator();
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, "zero-init identity", zero_init_identity);
  report(2, "merge equivalence", merge_equivalence);
  report(3, "DoRA decomposition", dora_decomposition);
  report(4, "gradient correctness", gradient_correctness);
  report(5, "frozen-base invariance", frozen_base_invariance);
  report(6, "parameter budget", parameter_budget);

  Corpus corpus;
  corpus.dir = fs::temp_directory_path() / "adaptune_acceptance";
  fs::remove_all(corpus.dir);
  adaptune::data::SynthConfig sc;
  sc.n_per_class = 50;
  sc.duration_s = 3.0;
  sc.seed = 7;
  adaptune::data::synthesize_dataset(sc, corpus.dir);
  corpus.manifest = corpus.dir / "manifest.jsonl";

  EndToEnd e2e;
  report(7, "end-to-end learning", [&] {
    e2e = end_to_end(corpus);
    return end_to_end_learning(e2e);
  });
  report(8, "baseline pipeline", [&] { return baseline_pipeline(corpus, e2e); });
  report(9, "metrics oracle", metrics_oracle);
  report(10, "CV protocol", [&] { return cv_protocol(corpus); });
  report(11, "SVM solver", svm_solver);
  report(12, "DSP contracts", dsp_contracts);

  fs::remove_all(corpus.dir);
  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
