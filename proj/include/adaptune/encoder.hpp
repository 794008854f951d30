#pragma once

// Compact pre-norm transformer encoder over log-Mel frames.
//
//   x0 = features·W_in + P[0:T]
//   per layer:  x += MHA(LN1(x))·Wo ;  x += W2ᵀ(gelu(LN2(x)·W1 + b1)) + b2
//
// All weights use the right-multiplication convention y = x·W, so a d×k
// matrix maps d input features to k outputs and column j is output j.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "adaptune/error.hpp"
#include "adaptune/ndgrad.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::encoder {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t n_mels = 80;
  std::size_t max_frames = 3000;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (n_layers < 1) throw ConfigError("encoder needs at least one layer");
    if (n_heads < 1) throw ConfigError("encoder needs at least one attention head");
    if (d_model < 2) throw ConfigError("d_model must be at least 2");
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (d_ff < 1) throw ConfigError("d_ff must be positive");
    if (n_mels < 1) throw ConfigError("n_mels must be positive");
    if (max_frames < 1) throw ConfigError("max_frames must be positive");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerWeights {
  Tensor wq, wk, wv, wo;  // d_model × d_model
  Tensor w1, b1;          // d_model × d_ff, d_ff
  Tensor w2, b2;          // d_ff × d_model, d_model
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct EncoderWeights {
  Tensor input_proj;  // n_mels × d_model
  std::vector<LayerWeights> layers;
  Tensor positional;  // max_frames × d_model, fixed

  friend bool operator==(const EncoderWeights&, const EncoderWeights&) = default;
};

/// Sinusoidal table: P[t, 2i] = sin(t / 10000^(2i/d)), P[t, 2i+1] = cos(·).
inline Tensor sinusoidal_table(std::size_t max_frames, std::size_t d_model) {
  Tensor p = Tensor::zeros({max_frames, d_model});
  for (std::size_t t = 0; t < max_frames; ++t) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      p.at(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < d_model) p.at(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return p;
}

/// Xavier-uniform matrix, bound √(6/(fan_in+fan_out)).
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& v : w.values()) v = dist(rng);
  return w;
}

inline EncoderWeights init_weights(const EncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t d = cfg.d_model;
  EncoderWeights w;
  w.input_proj = xavier_uniform(cfg.n_mels, d, rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.wq = xavier_uniform(d, d, rng);
    lw.wk = xavier_uniform(d, d, rng);
    lw.wv = xavier_uniform(d, d, rng);
    lw.wo = xavier_uniform(d, d, rng);
    lw.w1 = xavier_uniform(d, cfg.d_ff, rng);
    lw.b1 = Tensor::zeros({cfg.d_ff});
    lw.w2 = xavier_uniform(cfg.d_ff, d, rng);
    lw.b2 = Tensor::zeros({d});
    lw.ln1_gamma = Tensor::filled({d}, 1.0);
    lw.ln1_beta = Tensor::zeros({d});
    lw.ln2_gamma = Tensor::filled({d}, 1.0);
    lw.ln2_beta = Tensor::zeros({d});
    w.layers.push_back(std::move(lw));
  }
  w.positional = sinusoidal_table(cfg.max_frames, d);
  return w;
}

/// Checks every tensor shape against the config; throws ConfigError otherwise.
inline void check_shapes(const EncoderWeights& w, const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  auto expect = [](const Tensor& t, const Shape& s, const std::string& name) {
    if (t.shape() != s) {
      throw ConfigError("weight " + name + " has shape " + shape_str(t.shape()) + ", expected " + shape_str(s));
    }
  };
  expect(w.input_proj, {cfg.n_mels, d}, "input_proj");
  if (w.layers.size() != cfg.n_layers) throw ConfigError("layer count does not match config");
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights& lw = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    expect(lw.wq, {d, d}, p + "wq");
    expect(lw.wk, {d, d}, p + "wk");
    expect(lw.wv, {d, d}, p + "wv");
    expect(lw.wo, {d, d}, p + "wo");
    expect(lw.w1, {d, cfg.d_ff}, p + "w1");
    expect(lw.b1, {cfg.d_ff}, p + "b1");
    expect(lw.w2, {cfg.d_ff, d}, p + "w2");
    expect(lw.b2, {d}, p + "b2");
    expect(lw.ln1_gamma, {d}, p + "ln1_gamma");
    expect(lw.ln1_beta, {d}, p + "ln1_beta");
    expect(lw.ln2_gamma, {d}, p + "ln2_gamma");
    expect(lw.ln2_beta, {d}, p + "ln2_beta");
  }
  expect(w.positional, {cfg.max_frames, d}, "positional");
}

// ---------------------------------------------------------------------------
// Graph binding

struct LayerVars {
  grad::Var wq, wk, wv, wo, w1, b1, w2, b2, ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct EncoderVars {
  grad::Var input_proj;
  grad::Var positional;
  std::vector<LayerVars> layers;
};

/// Places every weight on the graph as a frozen constant.
inline EncoderVars bind_frozen(grad::Graph& g, const EncoderWeights& w) {
  EncoderVars v;
  v.input_proj = g.constant(w.input_proj);
  v.positional = g.constant(w.positional);
  for (const LayerWeights& lw : w.layers) {
    v.layers.push_back(LayerVars{g.constant(lw.wq), g.constant(lw.wk), g.constant(lw.wv), g.constant(lw.wo),
                                 g.constant(lw.w1), g.constant(lw.b1), g.constant(lw.w2), g.constant(lw.b2),
                                 g.constant(lw.ln1_gamma), g.constant(lw.ln1_beta), g.constant(lw.ln2_gamma),
                                 g.constant(lw.ln2_beta)});
  }
  return v;
}

/// softmax(Q·Kᵀ/√dₕ)·V, no mask.
inline grad::Var scaled_dot_product_attention(grad::Var q, grad::Var k, grad::Var v) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  if (qs.size() != 2 || qs != ks || ks != vs) {
    throw DimensionError("attention expects equal T×dₕ inputs, got " + shape_str(qs) + ", " + shape_str(ks) +
                         ", " + shape_str(vs));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qs[1]));
  grad::Var scores = grad::scale(grad::matmul(q, grad::transpose(k)), inv_sqrt);
  return grad::matmul(grad::softmax_rows(scores), v);
}

inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  grad::Graph g;
  return g.value(scaled_dot_product_attention(g.constant(q), g.constant(k), g.constant(v)));
}

inline grad::Var multi_head_attention(grad::Var x, const LayerVars& lv, std::size_t n_heads) {
  grad::Var q = grad::matmul(x, lv.wq);
  grad::Var k = grad::matmul(x, lv.wk);
  grad::Var v = grad::matmul(x, lv.wv);
  const std::size_t d = q.shape()[1];
  const std::size_t dh = d / n_heads;
  std::vector<grad::Var> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    heads.push_back(scaled_dot_product_attention(grad::slice_cols(q, b, e), grad::slice_cols(k, b, e),
                                                 grad::slice_cols(v, b, e)));
  }
  grad::Var merged = n_heads == 1 ? heads.front() : grad::concat_cols(heads);
  return grad::matmul(merged, lv.wo);
}

/// Runs the encoder on T×n_mels features; returns T×d_model hidden states.
inline grad::Var encoder_forward(grad::Graph& g, const EncoderVars& w, const Tensor& features,
                                 const EncoderConfig& cfg) {
  if (features.rank() != 2 || features.cols() != cfg.n_mels) {
    throw DimensionError("encoder input must be T×" + std::to_string(cfg.n_mels) + ", got " +
                         shape_str(features.shape()));
  }
  const std::size_t frames = features.rows();
  if (frames > cfg.max_frames) {
    throw LengthError("input has " + std::to_string(frames) + " frames, encoder accepts at most " +
                      std::to_string(cfg.max_frames));
  }
  grad::Var x = grad::matmul(g.constant(features), w.input_proj);
  x = grad::add(x, grad::slice_rows(w.positional, 0, frames));
  for (const LayerVars& lv : w.layers) {
    grad::Var h = grad::layer_norm(x, lv.ln1_gamma, lv.ln1_beta);
    x = grad::add(x, multi_head_attention(h, lv, cfg.n_heads));
    h = grad::layer_norm(x, lv.ln2_gamma, lv.ln2_beta);
    h = grad::gelu(grad::add_bias(grad::matmul(h, lv.w1), lv.b1));
    x = grad::add(x, grad::add_bias(grad::matmul(h, lv.w2), lv.b2));
  }
  return x;
}

inline Tensor encoder_forward(const Tensor& features, const EncoderWeights& w, const EncoderConfig& cfg) {
  cfg.validate();
  grad::Graph g;
  EncoderVars v = bind_frozen(g, w);
  return g.value(encoder_forward(g, v, features, cfg));
}

// ---------------------------------------------------------------------------

struct ParameterCount {
  std::size_t input_projection = 0;
  std::size_t attention = 0;
  std::size_t ffn = 0;
  std::size_t norms = 0;
  std::size_t total = 0;
};

/// Trainable-shaped parameters of the base; the fixed positional table is not counted.
inline ParameterCount count_parameters(const EncoderWeights& w) {
  ParameterCount c;
  c.input_projection = w.input_proj.size();
  for (const LayerWeights& lw : w.layers) {
    c.attention += lw.wq.size() + lw.wk.size() + lw.wv.size() + lw.wo.size();
    c.ffn += lw.w1.size() + lw.b1.size() + lw.w2.size() + lw.b2.size();
    c.norms += lw.ln1_gamma.size() + lw.ln1_beta.size() + lw.ln2_gamma.size() + lw.ln2_beta.size();
  }
  c.total = c.input_projection + c.attention + c.ffn + c.norms;
  return c;
}

}  // namespace adaptune::encoder
