#pragma once

// Low-rank adapters on the attention query/key/value projections.
//
// LoRA:  W = W0 + s·B·A                     B: d×r (zero init), A: r×k
// DoRA:  W[:,j] = m[j]·V[:,j]/‖V[:,j]‖      V = W0 + s·B·A, m: length k
//
// Only A, B (and m) are trainable; W0 and every other encoder tensor stays
// frozen. Effective weights are rebuilt on every forward pass so gradients
// flow through them exactly; `merge` bakes them into plain encoder weights.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "adaptune/encoder.hpp"
#include "adaptune/error.hpp"
#include "adaptune/head.hpp"
#include "adaptune/ndgrad.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::peft {

enum class Variant { lora, dora };

inline std::string to_string(Variant v) { return v == Variant::lora ? "lora" : "dora"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "lora") return Variant::lora;
  if (s == "dora") return Variant::dora;
  throw ConfigError("unknown adapter variant '" + s + "'");
}

/// Adapted projections, in storage order.
enum class Target : std::size_t { query = 0, key = 1, value = 2 };
inline constexpr std::size_t kTargetsPerLayer = 3;
inline constexpr std::array<const char*, kTargetsPerLayer> kTargetNames = {"wq", "wk", "wv"};

struct AdapterConfig {
  Variant variant = Variant::lora;
  std::size_t rank = 8;
  double scale = 1.0;
  double init_stddev = 0.01;

  void validate(std::size_t d, std::size_t k) const {
    if (rank < 1 || rank > std::min(d, k)) {
      throw ConfigError("adapter rank " + std::to_string(rank) + " must lie in [1, " +
                        std::to_string(std::min(d, k)) + "]");
    }
    if (!(scale > 0.0)) throw ConfigError("adapter scale must be positive");
    if (!(init_stddev >= 0.0)) throw ConfigError("adapter init stddev must be non-negative");
  }

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

struct Adapter {
  Tensor a;          // r × k
  Tensor b;          // d × r
  Tensor magnitude;  // k, DoRA only (empty for LoRA)

  friend bool operator==(const Adapter&, const Adapter&) = default;
};

using LayerAdapters = std::array<Adapter, kTargetsPerLayer>;

struct AdaptedModel {
  encoder::EncoderConfig encoder_config;
  encoder::EncoderWeights base;
  AdapterConfig config;
  std::vector<LayerAdapters> adapters;

  std::size_t adapter_count() const { return adapters.size() * kTargetsPerLayer; }
};

inline const Tensor& target_weight(const encoder::LayerWeights& lw, std::size_t target) {
  switch (target) {
    case 0: return lw.wq;
    case 1: return lw.wk;
    default: return lw.wv;
  }
}

inline Tensor& target_weight(encoder::LayerWeights& lw, std::size_t target) {
  switch (target) {
    case 0: return lw.wq;
    case 1: return lw.wk;
    default: return lw.wv;
  }
}

namespace detail {

inline void check_factors(const Tensor& w0, const Tensor& a, const Tensor& b) {
  if (w0.rank() != 2 || a.rank() != 2 || b.rank() != 2 || b.rows() != w0.rows() || a.cols() != w0.cols() ||
      b.cols() != a.rows()) {
    throw DimensionError("adapter factors " + shape_str(b.shape()) + "·" + shape_str(a.shape()) +
                         " do not fit base weight " + shape_str(w0.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Effective weights on the graph

inline grad::Var lora_effective_weight(grad::Var w0, grad::Var a, grad::Var b, double s) {
  detail::check_factors(w0.value(), a.value(), b.value());
  return grad::add(w0, grad::scale(grad::matmul(b, a), s));
}

inline grad::Var dora_effective_weight(grad::Var w0, grad::Var a, grad::Var b, grad::Var m, double s = 1.0) {
  if (m.value().size() != w0.value().cols()) {
    throw DimensionError("magnitude length must equal the column count of the base weight");
  }
  return grad::scale_unit_columns(lora_effective_weight(w0, a, b, s), m);
}

// Plain-tensor variants.

inline Tensor lora_effective_weight(const Tensor& w0, const Tensor& a, const Tensor& b, double s) {
  detail::check_factors(w0, a, b);
  Tensor w = w0;
  w.mat().noalias() += s * (b.mat() * a.mat());
  return w;
}

/// Unit-norm columns of W0 + s·B·A.
inline Tensor dora_direction(const Tensor& w0, const Tensor& a, const Tensor& b, double s = 1.0) {
  Tensor v = lora_effective_weight(w0, a, b, s);
  grad::Graph g;
  return g.value(grad::scale_unit_columns(g.constant(v), g.constant(Tensor::filled({v.cols()}, 1.0))));
}

inline Tensor dora_effective_weight(const Tensor& w0, const Tensor& a, const Tensor& b, const Tensor& m,
                                    double s = 1.0) {
  grad::Graph g;
  return g.value(dora_effective_weight(g.constant(w0), g.constant(a), g.constant(b), g.constant(m), s));
}

/// L2 norm of every column.
inline Tensor column_norms(const Tensor& w) {
  Tensor n = Tensor::zeros({w.cols()});
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) n[c] += w.at(r, c) * w.at(r, c);
  for (double& v : n.values()) v = std::sqrt(v);
  return n;
}

inline Tensor effective_weight(const Tensor& w0, const Adapter& ad, const AdapterConfig& cfg) {
  return cfg.variant == Variant::lora ? lora_effective_weight(w0, ad.a, ad.b, cfg.scale)
                                      : dora_effective_weight(w0, ad.a, ad.b, ad.magnitude, cfg.scale);
}

// ---------------------------------------------------------------------------

/// Creates adapters for Wq/Wk/Wv of every layer: B = 0, A ~ N(0, init_stddev²),
/// and for DoRA m = column norms of W0, so the effective weights start at W0.
inline AdaptedModel attach_adapters(encoder::EncoderWeights weights, const encoder::EncoderConfig& enc,
                                    const AdapterConfig& cfg, std::uint64_t seed) {
  encoder::check_shapes(weights, enc);
  cfg.validate(enc.d_model, enc.d_model);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, cfg.init_stddev);
  AdaptedModel model{enc, std::move(weights), cfg, {}};
  for (const encoder::LayerWeights& lw : model.base.layers) {
    LayerAdapters la;
    for (std::size_t t = 0; t < kTargetsPerLayer; ++t) {
      const Tensor& w0 = target_weight(lw, t);
      Adapter ad;
      ad.a = Tensor::zeros({cfg.rank, w0.cols()});
      if (cfg.init_stddev > 0.0) {
        for (double& v : ad.a.values()) v = normal(rng);
      }
      ad.b = Tensor::zeros({w0.rows(), cfg.rank});
      if (cfg.variant == Variant::dora) ad.magnitude = column_norms(w0);
      la[t] = std::move(ad);
    }
    model.adapters.push_back(std::move(la));
  }
  return model;
}

struct AdapterVars {
  grad::Var a, b, magnitude;
};

struct BoundModel {
  encoder::EncoderVars encoder;
  std::vector<std::array<AdapterVars, kTargetsPerLayer>> adapters;
};

/// Places the model on a graph. With `trainable`, adapter tensors become
/// parameter leaves; the base is always constant.
inline BoundModel bind(grad::Graph& g, const AdaptedModel& model, bool trainable = true) {
  BoundModel bm;
  bm.encoder = encoder::bind_frozen(g, model.base);
  const double s = model.config.scale;
  for (std::size_t l = 0; l < model.adapters.size(); ++l) {
    std::array<AdapterVars, kTargetsPerLayer> vars;
    encoder::LayerVars& lv = bm.encoder.layers[l];
    std::array<grad::Var*, kTargetsPerLayer> slots = {&lv.wq, &lv.wk, &lv.wv};
    for (std::size_t t = 0; t < kTargetsPerLayer; ++t) {
      const Adapter& ad = model.adapters[l][t];
      auto leaf = [&](const Tensor& x) { return trainable ? g.parameter(x) : g.constant(x); };
      vars[t].a = leaf(ad.a);
      vars[t].b = leaf(ad.b);
      if (model.config.variant == Variant::dora) {
        vars[t].magnitude = leaf(ad.magnitude);
        *slots[t] = dora_effective_weight(*slots[t], vars[t].a, vars[t].b, vars[t].magnitude, s);
      } else {
        *slots[t] = lora_effective_weight(*slots[t], vars[t].a, vars[t].b, s);
      }
    }
    bm.adapters.push_back(vars);
  }
  return bm;
}

/// Encoder hidden states through the adapted projections.
inline Tensor adapted_forward(const AdaptedModel& model, const Tensor& features) {
  grad::Graph g;
  BoundModel bm = bind(g, model, false);
  return g.value(encoder::encoder_forward(g, bm.encoder, features, model.encoder_config));
}

/// Plain encoder weights with every adapted projection replaced by its
/// effective weight. The adapters themselves are dropped.
inline encoder::EncoderWeights merge(const AdaptedModel& model) {
  encoder::EncoderWeights out = model.base;
  for (std::size_t l = 0; l < model.adapters.size(); ++l) {
    for (std::size_t t = 0; t < kTargetsPerLayer; ++t) {
      Tensor& w = target_weight(out.layers[l], t);
      w = effective_weight(w, model.adapters[l][t], model.config);
    }
  }
  return out;
}

/// Pointers to the trainable adapter tensors, ordered layer, target, (A, B[, m]).
inline std::vector<Tensor*> trainable_tensors(AdaptedModel& model) {
  std::vector<Tensor*> out;
  for (LayerAdapters& la : model.adapters) {
    for (Adapter& ad : la) {
      out.push_back(&ad.a);
      out.push_back(&ad.b);
      if (model.config.variant == Variant::dora) out.push_back(&ad.magnitude);
    }
  }
  return out;
}

inline std::vector<grad::Var> trainable_vars(const BoundModel& bm, Variant variant) {
  std::vector<grad::Var> out;
  for (const auto& layer : bm.adapters) {
    for (const AdapterVars& av : layer) {
      out.push_back(av.a);
      out.push_back(av.b);
      if (variant == Variant::dora) out.push_back(av.magnitude);
    }
  }
  return out;
}

struct TrainableReport {
  std::size_t lora_factors = 0;  // Σ r·(d+k)
  std::size_t magnitudes = 0;    // Σ k, DoRA only
  std::size_t head = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t total = 0;
  double ratio = 0.0;  // trainable / total
};

inline TrainableReport trainable_parameter_report(const AdaptedModel& model, const classifier::ClassifierHead& head) {
  TrainableReport r;
  for (const LayerAdapters& la : model.adapters) {
    for (const Adapter& ad : la) {
      r.lora_factors += ad.a.size() + ad.b.size();
      r.magnitudes += ad.magnitude.size();
    }
  }
  r.head = head.parameter_count();
  r.trainable = r.lora_factors + r.magnitudes + r.head;
  r.frozen = encoder::count_parameters(model.base).total;
  r.total = r.trainable + r.frozen;
  r.ratio = static_cast<double>(r.trainable) / static_cast<double>(r.total);
  return r;
}

}  // namespace adaptune::peft
