#pragma once

// Synthetic severity-graded speech-like corpus.
//
// Each clip is a source-filter vowel: a glottal impulse train with slow F0
// drift, two oral formant resonators, a nasal resonance near 250 Hz mixed in
// with the class's nasal gain, an antiresonance notch blended in by the same
// gain, and aspiration noise at the class's noise level (relative to the
// voiced RMS). A syllable envelope leaves short pauses between bursts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "adaptune/data/manifest.hpp"
#include "adaptune/data/wav.hpp"
#include "adaptune/error.hpp"
#include "adaptune/features/audio.hpp"
#include "adaptune/parallel.hpp"

namespace adaptune::data {

struct SynthConfig {
  std::size_t n_per_class = 50;
  double duration_s = 3.0;
  std::uint64_t seed = 7;
  double f0_min = 180.0;
  double f0_max = 320.0;
  std::array<double, 4> nasal_gain = {0.0, 0.15, 0.35, 0.6};
  std::array<double, 4> noise_level = {0.01, 0.05, 0.10, 0.18};

  void validate() const {
    if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
    if (!(duration_s > 0.0) || duration_s > 600.0) throw ConfigError("duration_s must lie in (0, 600]");
    if (!(f0_min > 0.0) || !(f0_max >= f0_min) || f0_max > 1000.0) throw ConfigError("invalid F0 range");
    for (std::size_t i = 1; i < 4; ++i) {
      if (!(nasal_gain[i] > nasal_gain[i - 1]) || !(noise_level[i] > noise_level[i - 1])) {
        throw ConfigError("severity parameters must increase strictly from normal to severe");
      }
    }
    if (nasal_gain[0] < 0.0 || noise_level[0] < 0.0) throw ConfigError("severity parameters must be non-negative");
  }
};

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_per_class = j.value("n_per_class", c.n_per_class);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.seed = j.value("seed", c.seed);
    c.f0_min = j.value("f0_min", c.f0_min);
    c.f0_max = j.value("f0_max", c.f0_max);
    if (j.contains("nasal_gain")) c.nasal_gain = j.at("nasal_gain").get<std::array<double, 4>>();
    if (j.contains("noise_level")) c.noise_level = j.at("noise_level").get<std::array<double, 4>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid synth config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["n_per_class"] = c.n_per_class;
  j["duration_s"] = c.duration_s;
  j["seed"] = c.seed;
  j["f0_min"] = c.f0_min;
  j["f0_max"] = c.f0_max;
  j["nasal_gain"] = c.nasal_gain;
  j["noise_level"] = c.noise_level;
  return j;
}

namespace detail {

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// Two-pole resonator with unity gain at DC.
class Resonator {
 public:
  Resonator(double freq, double bw, double rate) {
    c_ = -std::exp(-2.0 * std::numbers::pi * bw / rate);
    b_ = 2.0 * std::exp(-std::numbers::pi * bw / rate) * std::cos(2.0 * std::numbers::pi * freq / rate);
    a_ = 1.0 - b_ - c_;
  }
  double operator()(double x) {
    const double y = a_ * x + b_ * y1_ + c_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a_, b_, c_, y1_ = 0.0, y2_ = 0.0;
};

/// Two-zero antiresonator, the inverse of a resonator at the same settings.
class Antiresonator {
 public:
  Antiresonator(double freq, double bw, double rate) {
    const double c = -std::exp(-2.0 * std::numbers::pi * bw / rate);
    const double b = 2.0 * std::exp(-std::numbers::pi * bw / rate) * std::cos(2.0 * std::numbers::pi * freq / rate);
    const double a = 1.0 - b - c;
    a_ = 1.0 / a;
    b_ = -b / a;
    c_ = -c / a;
  }
  double operator()(double x) {
    const double y = a_ * x + b_ * x1_ + c_ * x2_;
    x2_ = x1_;
    x1_ = x;
    return y;
  }

 private:
  double a_, b_, c_, x1_ = 0.0, x2_ = 0.0;
};

inline double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace detail

/// One clip, a pure function of (config, label, id).
inline features::AudioClip synthesize_clip(const SynthConfig& cfg, Label label, const std::string& id) {
  constexpr double rate = features::kTargetRate;
  const std::uint64_t h = detail::fnv1a(id);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const auto cls = static_cast<std::size_t>(label);
  const double gain = cfg.nasal_gain[cls];
  const double noise = cfg.noise_level[cls];
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * rate));

  const double f0 = uniform(cfg.f0_min, cfg.f0_max);
  const double drift_rate = uniform(2.0, 5.0), drift_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double syll_rate = uniform(2.5, 4.0), syll_phase = uniform(0.0, std::numbers::pi);
  detail::Resonator f1(uniform(500.0, 900.0), 80.0, rate), f2(uniform(1100.0, 2200.0), 120.0, rate);
  detail::Resonator nasal(uniform(230.0, 270.0), 60.0, rate);
  detail::Antiresonator notch(uniform(900.0, 1100.0), 100.0, rate);

  std::vector<double> oral(n), nasal_out(n), env(n);
  double phase = 1.0, glottal = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double f = f0 * (1.0 + 0.03 * std::sin(2.0 * std::numbers::pi * drift_rate * t + drift_phase));
    phase += f / rate;
    double pulse = 0.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      pulse = 1.0;
    }
    glottal = 0.9 * glottal + pulse;  // spectral tilt
    oral[i] = f2(f1(glottal));
    nasal_out[i] = nasal(glottal);
    env[i] = std::pow(std::max(0.0, std::sin(std::numbers::pi * syll_rate * t + syll_phase)), 0.6);
  }
  const double oral_rms = detail::rms(oral), nasal_rms = detail::rms(nasal_out);
  std::vector<double> voiced(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double shaped = (1.0 - gain) * oral[i] + gain * notch(oral[i]);
    const double nas = nasal_rms > 0.0 ? nasal_out[i] * oral_rms / nasal_rms : 0.0;
    voiced[i] = env[i] * (shaped + gain * nas);
  }
  const double voiced_rms = detail::rms(voiced);
  std::normal_distribution<double> white(0.0, 1.0);
  std::vector<double> y(n);
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = white(rng);
    const double aspiration = w - 0.5 * prev;  // mild high-frequency emphasis
    prev = w;
    y[i] = voiced[i] + noise * voiced_rms * (0.3 + 0.7 * env[i]) * aspiration;
  }
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  const double level = uniform(0.3, 0.8);
  features::AudioClip clip;
  clip.sample_rate = features::kTargetRate;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(peak > 0.0 ? level * y[i] / peak : 0.0);
  return clip;
}

inline std::string synth_id(Label label, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", index);
  return to_string(label) + "_" + buf;
}

/// Manifest of the corpus without writing audio: ids, relative paths, and a
/// stratified 60/20/20 train/dev/eval split per class.
inline std::vector<ManifestEntry> synth_manifest(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<ManifestEntry> out;
  const std::size_t n = cfg.n_per_class;
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  for (std::size_t c = 0; c < 4; ++c) {
    const auto label = static_cast<Label>(c);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(c), 0x5u};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Split> split(n);
    for (std::size_t r = 0; r < n; ++r) {
      split[order[r]] = r < n_train ? Split::train : (r < n_train + n_dev ? Split::dev : Split::eval);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = synth_id(label, i);
      out.push_back({id, "audio/" + id + ".wav", label, split[i]});
    }
  }
  return out;
}

/// Writes out_dir/audio/<id>.wav and out_dir/manifest.jsonl.
inline std::vector<ManifestEntry> synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                                                     std::size_t threads = 1) {
  const std::vector<ManifestEntry> entries = synth_manifest(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "audio").string() + ": " + ec.message());
  run_indexed(entries.size(), threads, [&](std::size_t i) {
    const ManifestEntry& e = entries[i];
    write_wav(out_dir / e.path, synthesize_clip(cfg, e.label, e.id));
  });
  save_manifest(entries, out_dir / "manifest.jsonl");
  return entries;
}

}  // namespace adaptune::data
