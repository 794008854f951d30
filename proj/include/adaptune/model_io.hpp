#pragma once

// Conversions between models and checkpoint containers.
//
// Encoder:     config.encoder, encoder.input_proj, encoder.layer<l>.<tensor>
//              (the positional table is rebuilt from the config)
// Adapters:    config.encoder, config.adapter, adapter.layer<l>.<wq|wk|wv>.<A|B|m>,
//              head.weight, head.bias
// SVM:         svm.meta, svm.m<i>.<support|coef|alpha|index|params>
// Features:    standardizer.<mean|scale>, pca.<mean|components|variance|requested>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adaptune/checkpoint.hpp"
#include "adaptune/classifier.hpp"
#include "adaptune/encoder.hpp"
#include "adaptune/error.hpp"
#include "adaptune/features/pca.hpp"
#include "adaptune/peft.hpp"
#include "adaptune/svm.hpp"

namespace adaptune::model_io {

namespace detail {

inline std::size_t as_count(double v, const std::string& what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) throw FormatError("checkpoint field " + what + " is not a count");
  return static_cast<std::size_t>(v);
}

inline std::vector<double> scalars(const ckpt::Checkpoint& c, const std::string& name, std::size_t n) {
  const std::vector<double>& v = c.values(name);
  if (v.size() != n) throw FormatError("checkpoint entry " + name + " should hold " + std::to_string(n) + " values");
  return v;
}

inline const std::vector<std::pair<const char*, Tensor encoder::LayerWeights::*>>& layer_fields() {
  static const std::vector<std::pair<const char*, Tensor encoder::LayerWeights::*>> f = {
      {"wq", &encoder::LayerWeights::wq},
      {"wk", &encoder::LayerWeights::wk},
      {"wv", &encoder::LayerWeights::wv},
      {"wo", &encoder::LayerWeights::wo},
      {"w1", &encoder::LayerWeights::w1},
      {"b1", &encoder::LayerWeights::b1},
      {"w2", &encoder::LayerWeights::w2},
      {"b2", &encoder::LayerWeights::b2},
      {"ln1_gamma", &encoder::LayerWeights::ln1_gamma},
      {"ln1_beta", &encoder::LayerWeights::ln1_beta},
      {"ln2_gamma", &encoder::LayerWeights::ln2_gamma},
      {"ln2_beta", &encoder::LayerWeights::ln2_beta}};
  return f;
}

inline void add_matrix(ckpt::Checkpoint& c, const std::string& name, const RowMatrix& m) {
  c.add(name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
        std::vector<double>(m.data(), m.data() + m.size()));
}

inline RowMatrix get_matrix(const ckpt::Checkpoint& c, const std::string& name) {
  const ckpt::Entry& e = c.at(name);
  if (e.dims.size() != 2) throw FormatError("checkpoint entry " + name + " is not a matrix");
  RowMatrix m(e.dims[0], e.dims[1]);
  std::copy(e.data.begin(), e.data.end(), m.data());
  return m;
}

inline void add_vector(ckpt::Checkpoint& c, const std::string& name, const Eigen::VectorXd& v) {
  c.add_scalars(name, std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd get_vector(const ckpt::Checkpoint& c, const std::string& name) {
  const std::vector<double>& v = c.values(name);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder

inline void put_encoder_config(ckpt::Checkpoint& c, const encoder::EncoderConfig& cfg) {
  c.add_scalars("config.encoder",
                {static_cast<double>(cfg.n_layers), static_cast<double>(cfg.n_heads), static_cast<double>(cfg.d_model),
                 static_cast<double>(cfg.d_ff), static_cast<double>(cfg.n_mels), static_cast<double>(cfg.max_frames),
                 static_cast<double>(cfg.seed)});
}

inline encoder::EncoderConfig get_encoder_config(const ckpt::Checkpoint& c) {
  const std::vector<double> v = detail::scalars(c, "config.encoder", 7);
  encoder::EncoderConfig cfg;
  cfg.n_layers = detail::as_count(v[0], "n_layers");
  cfg.n_heads = detail::as_count(v[1], "n_heads");
  cfg.d_model = detail::as_count(v[2], "d_model");
  cfg.d_ff = detail::as_count(v[3], "d_ff");
  cfg.n_mels = detail::as_count(v[4], "n_mels");
  cfg.max_frames = detail::as_count(v[5], "max_frames");
  cfg.seed = static_cast<std::uint64_t>(detail::as_count(v[6], "seed"));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint encoder config: ") + e.what());
  }
  return cfg;
}

inline ckpt::Checkpoint encoder_checkpoint(const encoder::EncoderWeights& w, const encoder::EncoderConfig& cfg) {
  encoder::check_shapes(w, cfg);
  ckpt::Checkpoint c;
  put_encoder_config(c, cfg);
  c.add("encoder.input_proj", w.input_proj);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for (const auto& [name, field] : detail::layer_fields()) {
      c.add("encoder.layer" + std::to_string(l) + "." + name, w.layers[l].*field);
    }
  }
  return c;
}

struct LoadedEncoder {
  encoder::EncoderConfig config;
  encoder::EncoderWeights weights;
};

inline LoadedEncoder encoder_from_checkpoint(const ckpt::Checkpoint& c) {
  LoadedEncoder out;
  out.config = get_encoder_config(c);
  out.weights.input_proj = c.tensor("encoder.input_proj");
  out.weights.layers.resize(out.config.n_layers);
  for (std::size_t l = 0; l < out.config.n_layers; ++l) {
    for (const auto& [name, field] : detail::layer_fields()) {
      out.weights.layers[l].*field = c.tensor("encoder.layer" + std::to_string(l) + "." + name);
    }
  }
  out.weights.positional = encoder::sinusoidal_table(out.config.max_frames, out.config.d_model);
  try {
    encoder::check_shapes(out.weights, out.config);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint encoder weights: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adapters + head

inline ckpt::Checkpoint adapter_checkpoint(const classifier::PeftClassifier& clf) {
  const peft::AdaptedModel& m = clf.model;
  ckpt::Checkpoint c;
  put_encoder_config(c, m.encoder_config);
  c.add_scalars("config.adapter", {m.config.variant == peft::Variant::lora ? 0.0 : 1.0,
                                   static_cast<double>(m.config.rank), m.config.scale, m.config.init_stddev});
  for (std::size_t l = 0; l < m.adapters.size(); ++l) {
    for (std::size_t t = 0; t < peft::kTargetsPerLayer; ++t) {
      const std::string prefix = "adapter.layer" + std::to_string(l) + "." + peft::kTargetNames[t] + ".";
      const peft::Adapter& ad = m.adapters[l][t];
      c.add(prefix + "A", ad.a);
      c.add(prefix + "B", ad.b);
      if (m.config.variant == peft::Variant::dora) c.add(prefix + "m", ad.magnitude);
    }
  }
  c.add("head.weight", clf.head.weight);
  c.add("head.bias", clf.head.bias);
  return c;
}

/// Rebuilds a classifier from an adapter checkpoint on top of `base`; the
/// encoder configs must agree.
inline classifier::PeftClassifier classifier_from_checkpoints(const ckpt::Checkpoint& adapters,
                                                              const LoadedEncoder& base) {
  const encoder::EncoderConfig cfg = get_encoder_config(adapters);
  if (!(cfg == base.config)) throw ConfigError("adapter checkpoint was trained on a different encoder config");
  const std::vector<double> a = detail::scalars(adapters, "config.adapter", 4);
  classifier::PeftClassifier clf;
  clf.model.encoder_config = cfg;
  clf.model.base = base.weights;
  clf.model.config.variant = a[0] == 0.0 ? peft::Variant::lora : peft::Variant::dora;
  clf.model.config.rank = detail::as_count(a[1], "rank");
  clf.model.config.scale = a[2];
  clf.model.config.init_stddev = a[3];
  clf.model.config.validate(cfg.d_model, cfg.d_model);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    peft::LayerAdapters la;
    for (std::size_t t = 0; t < peft::kTargetsPerLayer; ++t) {
      const std::string prefix = "adapter.layer" + std::to_string(l) + "." + peft::kTargetNames[t] + ".";
      la[t].a = adapters.tensor(prefix + "A");
      la[t].b = adapters.tensor(prefix + "B");
      if (clf.model.config.variant == peft::Variant::dora) la[t].magnitude = adapters.tensor(prefix + "m");
      const Tensor& w0 = peft::target_weight(base.weights.layers[l], t);
      if (la[t].b.rows() != w0.rows() || la[t].a.cols() != w0.cols() || la[t].a.rows() != clf.model.config.rank ||
          la[t].b.cols() != clf.model.config.rank ||
          (clf.model.config.variant == peft::Variant::dora && la[t].magnitude.size() != w0.cols())) {
        throw DimensionError("adapter " + prefix + " does not fit the base weight " + shape_str(w0.shape()));
      }
    }
    clf.model.adapters.push_back(std::move(la));
  }
  clf.head.weight = adapters.tensor("head.weight");
  clf.head.bias = adapters.tensor("head.bias");
  if (clf.head.weight.rank() != 2 || clf.head.weight.rows() != cfg.d_model ||
      clf.head.weight.cols() != clf.head.bias.size()) {
    throw DimensionError("classifier head does not match d_model " + std::to_string(cfg.d_model));
  }
  return clf;
}

// ---------------------------------------------------------------------------
// SVM and feature transforms

inline void put_svm(ckpt::Checkpoint& c, const svm::SvmModel& m) {
  c.add_scalars("svm.meta", {static_cast<double>(m.n_classes), static_cast<double>(m.machines.size()),
                             static_cast<double>(m.input_dim())});
  for (std::size_t i = 0; i < m.machines.size(); ++i) {
    const svm::BinarySvm& b = m.machines[i];
    const std::string p = "svm.m" + std::to_string(i) + ".";
    detail::add_matrix(c, p + "support", b.support);
    detail::add_vector(c, p + "coef", b.coef);
    detail::add_vector(c, p + "alpha", b.alpha);
    c.add_scalars(p + "index", std::vector<double>(b.support_index.begin(), b.support_index.end()));
    c.add_scalars(p + "params", {b.bias, b.gamma, b.c});
  }
}

inline svm::SvmModel get_svm(const ckpt::Checkpoint& c) {
  const std::vector<double> meta = detail::scalars(c, "svm.meta", 3);
  svm::SvmModel m;
  m.n_classes = detail::as_count(meta[0], "n_classes");
  const std::size_t n = detail::as_count(meta[1], "machines");
  if (n != (m.n_classes == 2 ? 1u : m.n_classes)) throw FormatError("SVM checkpoint machine count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "svm.m" + std::to_string(i) + ".";
    svm::BinarySvm b;
    b.support = detail::get_matrix(c, p + "support");
    b.coef = detail::get_vector(c, p + "coef");
    b.alpha = detail::get_vector(c, p + "alpha");
    for (double v : c.values(p + "index")) b.support_index.push_back(detail::as_count(v, "support index"));
    const std::vector<double> params = detail::scalars(c, p + "params", 3);
    b.bias = params[0];
    b.gamma = params[1];
    b.c = params[2];
    if (b.coef.size() != b.support.rows() || b.alpha.size() != b.support.rows() ||
        static_cast<double>(b.support.cols()) != meta[2]) {
      throw FormatError("SVM checkpoint machine " + std::to_string(i) + " is inconsistent");
    }
    m.machines.push_back(std::move(b));
  }
  return m;
}

inline void put_standardizer(ckpt::Checkpoint& c, const features::Standardizer& s) {
  detail::add_vector(c, "standardizer.mean", s.mean.transpose());
  detail::add_vector(c, "standardizer.scale", s.scale.transpose());
}

inline features::Standardizer get_standardizer(const ckpt::Checkpoint& c) {
  features::Standardizer s;
  s.mean = detail::get_vector(c, "standardizer.mean").transpose();
  s.scale = detail::get_vector(c, "standardizer.scale").transpose();
  if (s.mean.size() != s.scale.size()) throw FormatError("standardizer mean and scale differ in length");
  return s;
}

inline void put_pca(ckpt::Checkpoint& c, const features::PCAModel& p) {
  detail::add_vector(c, "pca.mean", p.mean.transpose());
  detail::add_matrix(c, "pca.components", p.components);
  detail::add_vector(c, "pca.variance", p.explained_variance);
  c.add_scalars("pca.requested", {static_cast<double>(p.requested_components)});
}

inline features::PCAModel get_pca(const ckpt::Checkpoint& c) {
  features::PCAModel p;
  p.mean = detail::get_vector(c, "pca.mean").transpose();
  p.components = detail::get_matrix(c, "pca.components");
  p.explained_variance = detail::get_vector(c, "pca.variance");
  p.requested_components = detail::as_count(detail::scalars(c, "pca.requested", 1)[0], "pca.requested");
  if (p.mean.size() != p.components.rows() || p.explained_variance.size() != p.components.cols()) {
    throw FormatError("PCA checkpoint is inconsistent");
  }
  return p;
}

}  // namespace adaptune::model_io
