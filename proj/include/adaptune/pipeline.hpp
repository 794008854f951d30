#pragma once

// Run configuration and the commands behind the CLI: synth, features, train,
// cv, merge and report.
//
// Output files (all under the run's out directory):
//   synth     manifest.jsonl, audio/<id>.wav
//   features  features.csv (id, label, split, then the functional schema)
//   train     metrics.json; lora/dora: base.ckpt, adapters.ckpt, history.csv;
//             frozen-svm: base.ckpt, svm.ckpt; baseline-svm: svm.ckpt
//   cv        folds.json, fold<k>.ckpt per fold, metrics.json for the
//             selected fold on the eval split (when present)
//   merge     merged.ckpt
//   report    report.csv

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaptune/checkpoint.hpp"
#include "adaptune/classifier.hpp"
#include "adaptune/data/manifest.hpp"
#include "adaptune/data/synth.hpp"
#include "adaptune/data/wav.hpp"
#include "adaptune/encoder.hpp"
#include "adaptune/error.hpp"
#include "adaptune/features/audio.hpp"
#include "adaptune/features/functionals.hpp"
#include "adaptune/features/logmel.hpp"
#include "adaptune/features/pca.hpp"
#include "adaptune/metrics.hpp"
#include "adaptune/model_io.hpp"
#include "adaptune/parallel.hpp"
#include "adaptune/peft.hpp"
#include "adaptune/svm.hpp"

namespace adaptune::pipeline {

namespace fs = std::filesystem;

enum class Variant { lora, dora, frozen_svm, baseline_svm };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::lora: return "lora";
    case Variant::dora: return "dora";
    case Variant::frozen_svm: return "frozen-svm";
    case Variant::baseline_svm: return "baseline-svm";
  }
  return "";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "lora") return Variant::lora;
  if (s == "dora") return Variant::dora;
  if (s == "frozen-svm") return Variant::frozen_svm;
  if (s == "baseline-svm") return Variant::baseline_svm;
  throw ConfigError("unknown variant '" + s + "' (expected lora, dora, frozen-svm or baseline-svm)");
}

inline bool is_peft(Variant v) { return v == Variant::lora || v == Variant::dora; }

struct RunConfig {
  std::string manifest;
  std::string out = "out";
  data::Task task = data::Task::severity;
  Variant variant = Variant::lora;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  double duration_s = 3.0;
  encoder::EncoderConfig encoder;
  std::optional<std::uint64_t> encoder_seed;
  peft::AdapterConfig adapter;
  classifier::TrainConfig train;
  svm::SvmConfig svm;
  std::size_t pca_components = 100;
  std::size_t folds = 5;
  data::SynthConfig synth;
  std::optional<std::uint64_t> synth_seed;

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("a seed is required (set \"seed\" in the config or pass --seed)");
    return *seed;
  }

  /// Propagates the run seed into every component that was not given its own.
  void resolve_seeds() {
    const std::uint64_t s = require_seed();
    encoder.seed = encoder_seed.value_or(s);
    train.seed = s;
    svm.seed = s;
    synth.seed = synth_seed.value_or(s);
  }

  std::uint64_t adapter_seed() const { return require_seed() + 1; }

  std::size_t frames() const {
    return features::frame_count(static_cast<std::size_t>(std::llround(duration_s * features::kTargetRate)));
  }

  void validate() const {
    require_seed();
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(duration_s >= 0.03) || duration_s > 600.0) throw ConfigError("duration_s must lie in [0.03, 600]");
    encoder.validate();
    if (frames() > encoder.max_frames) {
      throw ConfigError("duration_s gives " + std::to_string(frames()) + " frames, above encoder.max_frames " +
                        std::to_string(encoder.max_frames));
    }
    if (is_peft(variant)) adapter.validate(encoder.d_model, encoder.d_model);
    train.validate();
    svm.validate();
    if (pca_components < 1) throw ConfigError("pca_components must be >= 1");
    if (folds < 2) throw ConfigError("folds must be >= 2");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j,
                     {"manifest", "out", "task", "variant", "seed", "threads", "duration_s", "encoder", "adapter",
                      "train", "svm", "pca_components", "folds", "synth"},
                     "config");
  try {
    c.manifest = j.value("manifest", c.manifest);
    c.out = j.value("out", c.out);
    if (j.contains("task")) c.task = data::parse_task(j.at("task").get<std::string>());
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.value("threads", c.threads);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.pca_components = j.value("pca_components", c.pca_components);
    c.folds = j.value("folds", c.folds);
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      detail::check_keys(e, {"n_layers", "n_heads", "d_model", "d_ff", "n_mels", "max_frames", "seed"}, "encoder");
      c.encoder.n_layers = e.value("n_layers", c.encoder.n_layers);
      c.encoder.n_heads = e.value("n_heads", c.encoder.n_heads);
      c.encoder.d_model = e.value("d_model", c.encoder.d_model);
      c.encoder.d_ff = e.value("d_ff", c.encoder.d_ff);
      c.encoder.n_mels = e.value("n_mels", c.encoder.n_mels);
      c.encoder.max_frames = e.value("max_frames", c.encoder.max_frames);
      if (e.contains("seed")) c.encoder_seed = e.at("seed").get<std::uint64_t>();
    }
    if (j.contains("adapter")) {
      const auto& a = j.at("adapter");
      detail::check_keys(a, {"rank", "scale", "init_stddev"}, "adapter");
      c.adapter.rank = a.value("rank", c.adapter.rank);
      c.adapter.scale = a.value("scale", c.adapter.scale);
      c.adapter.init_stddev = a.value("init_stddev", c.adapter.init_stddev);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::check_keys(t, {"learning_rate", "epochs", "batch_size", "max_steps"}, "train");
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.max_steps = t.value("max_steps", c.train.max_steps);
    }
    if (j.contains("svm")) {
      const auto& s = j.at("svm");
      detail::check_keys(s, {"c", "gamma", "tol", "max_sweeps"}, "svm");
      c.svm.c = s.value("c", c.svm.c);
      c.svm.gamma = s.value("gamma", c.svm.gamma);
      c.svm.tol = s.value("tol", c.svm.tol);
      c.svm.max_sweeps = s.value("max_sweeps", c.svm.max_sweeps);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      c.synth = data::synth_config_from_json(s);
      if (s.contains("seed")) c.synth_seed = s.at("seed").get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  if (is_peft(c.variant)) c.adapter.variant = c.variant == Variant::lora ? peft::Variant::lora : peft::Variant::dora;
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Per-file feature extraction

/// Reads an entry's audio, rejects non-finite samples and resamples to 16 kHz.
inline features::AudioClip load_audio(const fs::path& manifest_path, const data::ManifestEntry& e) {
  const fs::path path = data::resolve_audio(manifest_path, e);
  features::AudioClip clip = data::read_wav(path);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    if (!std::isfinite(clip.samples[i])) {
      throw DataError(path.string() + ": non-finite sample at index " + std::to_string(i));
    }
  }
  try {
    return features::resample_to_16k(clip);
  } catch (const Error& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

/// Normalized log-mel input of the encoder: pad/truncate, log-mel, scale.
inline Tensor encoder_input(const features::AudioClip& clip16k, double duration_s, std::size_t n_mels) {
  return features::normalize_log_mel(features::log_mel(features::pad_or_truncate(clip16k, duration_s), n_mels));
}

struct Corpus {
  fs::path manifest_path;
  std::vector<data::ManifestEntry> entries;

  std::vector<std::size_t> indices(std::initializer_list<data::Split> splits) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (std::find(splits.begin(), splits.end(), entries[i].split) != splits.end()) out.push_back(i);
    return out;
  }
};

inline Corpus load_corpus(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("no manifest given (set \"manifest\" in the config)");
  Corpus c;
  c.manifest_path = cfg.manifest;
  c.entries = data::load_manifest(c.manifest_path);
  if (c.entries.empty()) throw DataError("manifest " + cfg.manifest + " has no entries");
  return c;
}

/// Runs `f(entry index)` for every entry and names the file in any failure.
template <class F>
auto per_entry(const Corpus& corpus, std::size_t threads, F f) {
  using T = std::invoke_result_t<F, std::size_t>;
  std::vector<T> out(corpus.entries.size());
  run_indexed(out.size(), threads, [&](std::size_t i) {
    const std::string where = data::resolve_audio(corpus.manifest_path, corpus.entries[i]).string();
    try {
      out[i] = f(i);
    } catch (const NumericError& e) {
      throw DataError(where + ": " + e.what());
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (msg.find(where) != std::string::npos) throw;
      throw DataError(where + ": " + msg);
    }
  });
  return out;
}

inline std::vector<Tensor> encoder_inputs(const Corpus& corpus, const RunConfig& cfg) {
  return per_entry(corpus, cfg.threads, [&](std::size_t i) {
    const Tensor x = encoder_input(load_audio(corpus.manifest_path, corpus.entries[i]), cfg.duration_s, cfg.encoder.n_mels);
    if (!x.all_finite()) throw NumericError("log-mel features are not finite");
    return x;
  });
}

inline std::vector<std::vector<double>> functional_rows(const Corpus& corpus, std::size_t threads) {
  return per_entry(corpus, threads, [&](std::size_t i) {
    return features::functional_features(load_audio(corpus.manifest_path, corpus.entries[i]));
  });
}

/// Mean-pooled last-layer hidden states of the frozen encoder.
inline std::vector<std::vector<double>> embeddings(const std::vector<Tensor>& inputs, const encoder::EncoderWeights& w,
                                                   const encoder::EncoderConfig& cfg, std::size_t threads) {
  std::vector<std::vector<double>> out(inputs.size());
  run_indexed(inputs.size(), threads, [&](std::size_t i) {
    const Tensor h = encoder::encoder_forward(inputs[i], w, cfg);
    const Eigen::RowVectorXd m = h.mat().colwise().mean();
    out[i].assign(m.data(), m.data() + m.size());
  });
  return out;
}

inline RowMatrix gather_rows(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw DataError("no rows selected");
  RowMatrix x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(rows[idx[0]].size()));
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < rows[idx[r]].size(); ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[idx[r]][c];
  return x;
}

inline std::vector<std::size_t> labels_of(const Corpus& corpus, const std::vector<std::size_t>& idx, data::Task task) {
  std::vector<std::size_t> out;
  for (std::size_t i : idx) out.push_back(data::class_index(corpus.entries[i].label, task));
  return out;
}

inline std::vector<classifier::Example> examples_of(const Corpus& corpus, const std::vector<Tensor>& inputs,
                                                    const std::vector<std::size_t>& idx, data::Task task) {
  std::vector<classifier::Example> out;
  for (std::size_t i : idx) {
    out.push_back({corpus.entries[i].id, inputs[i], data::class_index(corpus.entries[i].label, task)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVM pipelines

/// Standardize → (PCA) → RBF SVM.
struct SvmPipeline {
  features::Standardizer standardizer;
  std::optional<features::PCAModel> pca;
  svm::SvmModel svm;

  RowMatrix project(const RowMatrix& x) const {
    RowMatrix z = standardizer.transform(x);
    return pca ? features::pca_transform(*pca, z) : z;
  }

  std::vector<std::size_t> predict(const RowMatrix& x) const { return svm::svm_predict(svm, project(x)); }

  ckpt::Checkpoint checkpoint() const {
    ckpt::Checkpoint c;
    model_io::put_standardizer(c, standardizer);
    if (pca) model_io::put_pca(c, *pca);
    model_io::put_svm(c, svm);
    return c;
  }
};

inline SvmPipeline fit_svm_pipeline(const RowMatrix& x, const std::vector<std::size_t>& labels, std::size_t n_classes,
                                    bool use_pca, std::size_t pca_components, const svm::SvmConfig& cfg,
                                    std::size_t threads, std::ostream* warn) {
  SvmPipeline p;
  p.standardizer = features::Standardizer::fit(x);
  RowMatrix z = p.standardizer.transform(x);
  if (use_pca) {
    p.pca = features::pca_fit(z, pca_components, warn);
    z = features::pca_transform(*p.pca, z);
  }
  p.svm = svm::svm_train_multiclass(z, labels, n_classes, cfg, threads);
  return p;
}

// ---------------------------------------------------------------------------
// Output helpers

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::ordered_json metrics_json(const metrics::MetricsReport& r, const RunConfig& cfg,
                                           const std::string& split, std::size_t n_examples) {
  nlohmann::ordered_json j;
  j["task"] = data::to_string(cfg.task);
  j["variant"] = to_string(cfg.variant);
  j["split"] = split;
  j["n_examples"] = n_examples;
  j["class_names"] = data::class_names(cfg.task);
  const nlohmann::ordered_json m = metrics::to_json(r);
  for (const auto& [k, v] : m.items()) j[k] = v;
  j["accuracy_percent"] = 100.0 * r.accuracy;
  return j;
}

inline std::string history_csv(const classifier::TrainResult& r) {
  std::string s = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) s += std::to_string(e + 1) + "," + format_double(r.epoch_loss[e]) + "\n";
  return s;
}

inline std::string summary_line(const metrics::MetricsReport& r, const std::string& what) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: accuracy=%.2f%% macro_f1=%.4f", what.c_str(), 100.0 * r.accuracy, r.macro_f1);
  return buf;
}

inline void print_trainable(const classifier::PeftClassifier& clf, std::ostream& log) {
  const peft::TrainableReport t = peft::trainable_parameter_report(clf.model, clf.head);
  char buf[200];
  std::snprintf(buf, sizeof buf, "trainable=%zu (factors=%zu magnitudes=%zu head=%zu) frozen=%zu total=%zu ratio=%.4f",
                t.trainable, t.lora_factors, t.magnitudes, t.head, t.frozen, t.total, t.ratio);
  log << buf << "\n";
}

// ---------------------------------------------------------------------------
// Commands

inline std::vector<data::ManifestEntry> cmd_synth(RunConfig cfg, std::ostream& log = std::cout) {
  cfg.resolve_seeds();
  const std::vector<data::ManifestEntry> entries = data::synthesize_dataset(cfg.synth, cfg.out, cfg.threads);
  log << "wrote " << entries.size() << " clips and " << (fs::path(cfg.out) / "manifest.jsonl").string() << "\n";
  return entries;
}

inline void cmd_features(RunConfig cfg, std::ostream& log = std::cout) {
  cfg.resolve_seeds();
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  const std::vector<std::vector<double>> rows = functional_rows(corpus, cfg.threads);
  std::string csv = "id,label,split";
  for (const std::string& n : features::functional_names()) csv += "," + n;
  csv += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const data::ManifestEntry& e = corpus.entries[i];
    csv += e.id + "," + data::to_string(e.label) + "," + data::to_string(e.split);
    for (double v : rows[i]) csv += "," + format_double(v);
    csv += "\n";
  }
  ensure_dir(cfg.out);
  write_text(fs::path(cfg.out) / "features.csv", csv);
  log << "wrote " << rows.size() << " rows of " << features::kFunctionalDim << " functionals to "
      << (fs::path(cfg.out) / "features.csv").string() << "\n";
}

struct TrainOutput {
  metrics::MetricsReport eval;
  classifier::TrainResult history;
};

inline TrainOutput cmd_train(RunConfig cfg, std::ostream& log = std::cout) {
  cfg.resolve_seeds();
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  const std::vector<std::size_t> train_idx = corpus.indices({data::Split::train});
  const std::vector<std::size_t> eval_idx = corpus.indices({data::Split::eval});
  if (train_idx.empty()) throw DataError("manifest has no train entries");
  if (eval_idx.empty()) throw DataError("manifest has no eval entries");
  const std::size_t n_classes = data::n_classes(cfg.task);
  const fs::path out(cfg.out);
  ensure_dir(out);
  TrainOutput result;

  if (is_peft(cfg.variant)) {
    const std::vector<Tensor> inputs = encoder_inputs(corpus, cfg);
    const encoder::EncoderWeights base = encoder::init_weights(cfg.encoder);
    classifier::PeftClassifier clf = classifier::make_classifier(
        peft::attach_adapters(base, cfg.encoder, cfg.adapter, cfg.adapter_seed()), n_classes);
    print_trainable(clf, log);
    const auto train_set = examples_of(corpus, inputs, train_idx, cfg.task);
    const auto eval_set = examples_of(corpus, inputs, eval_idx, cfg.task);
    result.history = classifier::train(train_set, clf, cfg.train);
    result.eval = classifier::evaluate(clf, eval_set);
    ckpt::save(model_io::encoder_checkpoint(base, cfg.encoder), out / "base.ckpt");
    ckpt::save(model_io::adapter_checkpoint(clf), out / "adapters.ckpt");
    write_text(out / "history.csv", history_csv(result.history));
  } else {
    const bool frozen = cfg.variant == Variant::frozen_svm;
    std::vector<std::vector<double>> rows;
    if (frozen) {
      const encoder::EncoderWeights base = encoder::init_weights(cfg.encoder);
      rows = embeddings(encoder_inputs(corpus, cfg), base, cfg.encoder, cfg.threads);
      ckpt::save(model_io::encoder_checkpoint(base, cfg.encoder), out / "base.ckpt");
    } else {
      rows = functional_rows(corpus, cfg.threads);
    }
    const SvmPipeline p = fit_svm_pipeline(gather_rows(rows, train_idx), labels_of(corpus, train_idx, cfg.task), n_classes,
                                           !frozen, cfg.pca_components, cfg.svm, cfg.threads, &std::clog);
    result.eval = metrics::evaluate(p.predict(gather_rows(rows, eval_idx)), labels_of(corpus, eval_idx, cfg.task), n_classes);
    ckpt::save(p.checkpoint(), out / "svm.ckpt");
  }
  write_text(out / "metrics.json", metrics_json(result.eval, cfg, "eval", eval_idx.size()).dump(2) + "\n");
  log << summary_line(result.eval, to_string(cfg.variant) + " " + data::to_string(cfg.task) + " eval") << "\n";
  return result;
}

struct CvOutput {
  std::vector<classifier::FoldResult> folds;
  std::size_t selected = 0;
  std::optional<metrics::MetricsReport> eval;
};

inline CvOutput cmd_cv(RunConfig cfg, std::ostream& log = std::cout) {
  cfg.resolve_seeds();
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  const std::vector<std::size_t> pooled = corpus.indices({data::Split::train, data::Split::dev});
  const std::vector<std::size_t> eval_idx = corpus.indices({data::Split::eval});
  if (pooled.empty()) throw DataError("manifest has no train or dev entries");
  const std::size_t n_classes = data::n_classes(cfg.task);
  const fs::path out(cfg.out);
  ensure_dir(out);
  CvOutput result;
  std::vector<ckpt::Checkpoint> fold_ckpts;

  if (is_peft(cfg.variant)) {
    const std::vector<Tensor> inputs = encoder_inputs(corpus, cfg);
    const encoder::EncoderWeights base = encoder::init_weights(cfg.encoder);
    const classifier::PeftClassifier initial = classifier::make_classifier(
        peft::attach_adapters(base, cfg.encoder, cfg.adapter, cfg.adapter_seed()), n_classes);
    print_trainable(initial, log);
    const auto pooled_set = examples_of(corpus, inputs, pooled, cfg.task);
    auto cv = classifier::cross_validate(pooled_set, initial, cfg.train, cfg.folds, cfg.threads);
    for (const auto& m : cv.models) fold_ckpts.push_back(model_io::adapter_checkpoint(m));
    result.folds = std::move(cv.folds);
    result.selected = cv.selected;
    if (!eval_idx.empty()) result.eval = classifier::evaluate(cv.selected_model(), examples_of(corpus, inputs, eval_idx, cfg.task));
    ckpt::save(model_io::encoder_checkpoint(base, cfg.encoder), out / "base.ckpt");
  } else {
    const bool frozen = cfg.variant == Variant::frozen_svm;
    std::vector<std::vector<double>> rows;
    if (frozen) {
      const encoder::EncoderWeights base = encoder::init_weights(cfg.encoder);
      rows = embeddings(encoder_inputs(corpus, cfg), base, cfg.encoder, cfg.threads);
      ckpt::save(model_io::encoder_checkpoint(base, cfg.encoder), out / "base.ckpt");
    } else {
      rows = functional_rows(corpus, cfg.threads);
    }
    const RowMatrix x = gather_rows(rows, pooled);
    const std::vector<std::size_t> y = labels_of(corpus, pooled, cfg.task);
    std::vector<std::string> ids;
    for (std::size_t i : pooled) ids.push_back(corpus.entries[i].id);
    auto fit = [&](const std::vector<std::size_t>& tr) {
      RowMatrix xt(static_cast<Eigen::Index>(tr.size()), x.cols());
      std::vector<std::size_t> yt;
      for (std::size_t r = 0; r < tr.size(); ++r) {
        xt.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(tr[r]));
        yt.push_back(y[tr[r]]);
      }
      std::ostringstream quiet;
      return fit_svm_pipeline(xt, yt, n_classes, !frozen, cfg.pca_components, cfg.svm, 1, &quiet);
    };
    auto predict = [&](const SvmPipeline& p, const std::vector<std::size_t>& va) {
      RowMatrix xv(static_cast<Eigen::Index>(va.size()), x.cols());
      for (std::size_t r = 0; r < va.size(); ++r) xv.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(va[r]));
      return p.predict(xv);
    };
    auto cv = classifier::cross_validate_with(ids, y, n_classes, cfg.folds, cfg.train.seed, fit, predict, cfg.threads);
    for (const auto& m : cv.models) fold_ckpts.push_back(m.checkpoint());
    result.folds = std::move(cv.folds);
    result.selected = cv.selected;
    if (!eval_idx.empty()) {
      result.eval = metrics::evaluate(cv.selected_model().predict(gather_rows(rows, eval_idx)),
                                      labels_of(corpus, eval_idx, cfg.task), n_classes);
    }
  }

  nlohmann::ordered_json j;
  j["task"] = data::to_string(cfg.task);
  j["variant"] = to_string(cfg.variant);
  j["k"] = cfg.folds;
  j["seed"] = cfg.train.seed;
  j["selected"] = result.selected;
  j["folds"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < result.folds.size(); ++k) {
    classifier::FoldResult& f = result.folds[k];
    f.checkpoint = "fold" + std::to_string(k) + ".ckpt";
    ckpt::save(fold_ckpts[k], out / f.checkpoint);
    nlohmann::ordered_json fj;
    fj["fold"] = f.fold;
    fj["checkpoint"] = f.checkpoint;
    fj["metrics"] = metrics::to_json(f.metrics);
    fj["validation_ids"] = f.validation_ids;
    j["folds"].push_back(fj);
    log << summary_line(f.metrics, "fold " + std::to_string(k)) << "\n";
  }
  write_text(out / "folds.json", j.dump(2) + "\n");
  log << "selected fold " << result.selected << " (" << result.folds[result.selected].checkpoint << ")\n";
  if (result.eval) {
    write_text(out / "metrics.json", metrics_json(*result.eval, cfg, "eval", eval_idx.size()).dump(2) + "\n");
    log << summary_line(*result.eval, "selected model on eval") << "\n";
  }
  return result;
}

inline constexpr double kMergeTolerance = 1e-10;

/// Merges adapters into the base weights, writes merged.ckpt and returns the
/// largest absolute hidden-state deviation over 16 seeded random inputs.
inline double cmd_merge(const fs::path& adapters_path, const fs::path& base_path, const fs::path& out_dir,
                        std::uint64_t seed, std::ostream& log = std::cout) {
  const ckpt::Checkpoint base_ckpt = ckpt::load(base_path);
  const model_io::LoadedEncoder base = model_io::encoder_from_checkpoint(base_ckpt);
  const classifier::PeftClassifier clf = model_io::classifier_from_checkpoints(ckpt::load(adapters_path), base);
  const encoder::EncoderWeights merged = peft::merge(clf.model);
  const std::size_t frames = std::min<std::size_t>(base.config.max_frames, 64);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double dev = 0.0;
  for (int i = 0; i < 16; ++i) {
    Tensor x = Tensor::zeros({frames, base.config.n_mels});
    for (double& v : x.values()) v = normal(rng);
    dev = std::max(dev, max_abs_diff(peft::adapted_forward(clf.model, x), encoder::encoder_forward(x, merged, base.config)));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max_forward_dev=%.6e", dev);
  log << buf << "\n";
  if (!(dev <= kMergeTolerance)) throw NumericError("merged forward deviates from the adapted forward by " + format_double(dev));
  ensure_dir(out_dir);
  ckpt::save(model_io::encoder_checkpoint(merged, base.config), out_dir / "merged.ckpt");
  return dev;
}

struct ReportRow {
  std::string model;
  std::string task;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

inline std::string fixed2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline ReportRow read_report_row(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  const metrics::MetricsReport r = metrics::report_from_json(j);
  ReportRow row;
  row.model = j.contains("variant") && j["variant"].is_string() ? j["variant"].get<std::string>() : path.stem().string();
  row.task = j.contains("task") && j["task"].is_string() ? j["task"].get<std::string>() : "-";
  row.accuracy = r.accuracy;
  row.macro_f1 = r.macro_f1;
  return row;
}

/// Text table of accuracy (%) and macro-F1, both to 2 decimals; returns the CSV form.
inline std::string cmd_report(const std::vector<fs::path>& paths, const std::string& out_dir, std::ostream& log = std::cout) {
  if (paths.empty()) throw ConfigError("report needs at least one metrics file");
  std::vector<ReportRow> rows;
  for (const fs::path& p : paths) rows.push_back(read_report_row(p));
  std::size_t wm = 5, wt = 4;
  for (const ReportRow& r : rows) {
    wm = std::max(wm, r.model.size());
    wt = std::max(wt, r.task.size());
  }
  const auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  log << pad("Model", wm) << "  " << pad("Task", wt) << "  Accuracy (%)  F1\n";
  std::string csv = "model,task,accuracy_percent,f1\n";
  for (const ReportRow& r : rows) {
    log << pad(r.model, wm) << "  " << pad(r.task, wt) << "  " << pad(fixed2(100.0 * r.accuracy), 12) << "  "
        << fixed2(r.macro_f1) << "\n";
    csv += r.model + "," + r.task + "," + fixed2(100.0 * r.accuracy) + "," + fixed2(r.macro_f1) + "\n";
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(fs::path(out_dir) / "report.csv", csv);
  }
  return csv;
}

}  // namespace adaptune::pipeline
