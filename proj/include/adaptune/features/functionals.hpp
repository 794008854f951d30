#pragma once

// Utterance-level functional features (88 values).
//
// Twelve frame descriptors on 25 ms / 10 ms frames, each summarized by
// mean, std, p20, p50, p80, range (72 values, descriptor-major):
//   0 log_energy   1 zcr          2 f0 (voiced frames only)   3 voicing_prob
//   4 centroid     5 slope        6 flux                      7 rolloff85
//   8 band_0_500   9 band_500_1k 10 band_1k_2k               11 band_2k_4k
// followed by 16 utterance values:
//   72 voiced_fraction          73 mean_voiced_seg_s     74 mean_unvoiced_seg_s
//   75 voiced_segs_per_s        76 loudness_peaks_per_s
//   77..80 band ratios, mean over voiced frames
//   81..84 band ratios, mean over unvoiced frames
//   85 loudness_slope (per s)   86 f0_slope (Hz per s)   87 hammarberg
//
// Band ratios are ln of band power over total power. Durations count frames
// times the hop, so trailing samples that do not complete a frame are ignored.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "adaptune/error.hpp"
#include "adaptune/features/audio.hpp"
#include "adaptune/features/logmel.hpp"

namespace adaptune::features {

inline constexpr std::size_t kFunctionalDim = 88;
inline constexpr std::size_t kDescriptorCount = 12;

struct PitchConfig {
  double f0_min = 60.0;
  double f0_max = 400.0;
  std::size_t window = 640;       // autocorrelation span in samples
  double voicing_threshold = 0.5;  // normalized autocorrelation peak
  double silence_power = 1e-8;     // mean-square power below which a frame is unvoiced
};

struct PitchEstimate {
  double f0 = 0.0;  // Hz, 0 when unvoiced
  double voicing = 0.0;
  bool voiced = false;
};

/// Normalized autocorrelation pitch for the window starting at `start`;
/// samples past the end read as zero. The shortest lag whose peak reaches
/// 0.9 of the best peak wins, refined by parabolic interpolation.
inline PitchEstimate estimate_pitch(std::span<const float> x, std::size_t start, const PitchConfig& pc = {}) {
  const auto sample = [&](std::size_t i) { return i < x.size() ? static_cast<double>(x[i]) : 0.0; };
  const std::size_t lag_min = static_cast<std::size_t>(std::floor(kTargetRate / pc.f0_max));
  const std::size_t lag_max = static_cast<std::size_t>(std::ceil(kTargetRate / pc.f0_min));
  std::vector<double> buf(pc.window);
  double power = 0.0;
  for (std::size_t i = 0; i < pc.window; ++i) {
    buf[i] = sample(start + i);
    power += buf[i] * buf[i];
  }
  PitchEstimate est;
  if (power / static_cast<double>(pc.window) < pc.silence_power) return est;

  // prefix energies for the sliding normalization
  std::vector<double> cum(pc.window + 1, 0.0);
  for (std::size_t i = 0; i < pc.window; ++i) cum[i + 1] = cum[i] + buf[i] * buf[i];
  std::vector<double> r(lag_max + 2, 0.0);
  for (std::size_t lag = lag_min - 1; lag <= lag_max + 1 && lag < pc.window; ++lag) {
    const std::size_t n = pc.window - lag;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += buf[i] * buf[i + lag];
    const double e0 = cum[n], e1 = cum[pc.window] - cum[lag];
    r[lag] = e0 > 0.0 && e1 > 0.0 ? acc / std::sqrt(e0 * e1) : 0.0;
  }
  double best = 0.0;
  for (std::size_t lag = lag_min; lag <= lag_max; ++lag) best = std::max(best, r[lag]);
  est.voicing = std::clamp(best, 0.0, 1.0);
  if (best < pc.voicing_threshold) return est;
  std::size_t pick = lag_min;
  for (std::size_t lag = lag_min; lag <= lag_max; ++lag) {
    if (r[lag] >= 0.9 * best && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
      pick = lag;
      break;
    }
  }
  const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
  const double denom = a - 2.0 * b + c;
  const double shift = denom < 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
  est.f0 = kTargetRate / (static_cast<double>(pick) + shift);
  est.voiced = true;
  return est;
}

namespace detail {

/// Linear-interpolated percentile (q in [0, 1]) of a non-empty sample.
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// mean, std, p20, p50, p80, range; all zeros for an empty sample.
inline std::array<double, 6> summarize(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  return {mean, std::sqrt(var / n), percentile(v, 0.2), percentile(v, 0.5), percentile(v, 0.8), *mx - *mn};
}

/// Least-squares slope of y against x; 0 with fewer than two points.
inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return 0.0;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace detail

inline std::vector<std::string> functional_names() {
  static const std::array<const char*, kDescriptorCount> lld = {
      "log_energy", "zcr",      "f0",       "voicing_prob", "centroid",   "slope",
      "flux",       "rolloff85", "band_0_500", "band_500_1k", "band_1k_2k", "band_2k_4k"};
  static const std::array<const char*, 6> stats = {"mean", "std", "p20", "p50", "p80", "range"};
  std::vector<std::string> names;
  for (const char* d : lld)
    for (const char* s : stats) names.push_back(std::string(d) + "_" + s);
  for (const char* extra : {"voiced_fraction", "mean_voiced_seg_s", "mean_unvoiced_seg_s", "voiced_segs_per_s",
                            "loudness_peaks_per_s"})
    names.emplace_back(extra);
  for (const char* group : {"voiced", "unvoiced"})
    for (const char* band : {"band_0_500", "band_500_1k", "band_1k_2k", "band_2k_4k"})
      names.push_back(std::string(band) + "_" + group + "_mean");
  for (const char* extra : {"loudness_slope", "f0_slope", "hammarberg"}) names.emplace_back(extra);
  return names;
}

/// 88-value functional vector of a 16 kHz clip of at least 0.5 s.
inline std::vector<double> functional_features(const AudioClip& clip, const PitchConfig& pc = {}) {
  if (clip.sample_rate != kTargetRate) {
    throw RateError("functional_features expects 16000 Hz input, got " + std::to_string(clip.sample_rate));
  }
  if (clip.samples.size() < kTargetRate / 2) {
    throw LengthError("functional features need at least 0.5 s of audio, got " +
                      std::to_string(clip.samples.size()) + " samples");
  }
  const FrameConfig fc;
  const std::span<const float> x(clip.samples);
  const RowMatrix power = power_spectrogram(x, fc);
  const std::size_t n_frames = static_cast<std::size_t>(power.rows());
  const std::size_t n_bins = static_cast<std::size_t>(power.cols());
  const double bin_hz = static_cast<double>(kTargetRate) / static_cast<double>(fc.n_fft);
  const double hop_s = static_cast<double>(fc.hop) / kTargetRate;
  const double duration = static_cast<double>(n_frames) * hop_s;
  constexpr double eps = 1e-10;

  const auto band_power = [&](std::size_t t, double lo, double hi) {
    double s = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= lo && f < hi) s += power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
    }
    return s;
  };
  const auto band_max = [&](std::size_t t, double lo, double hi) {
    double m = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      if (f >= lo && f < hi) m = std::max(m, power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)));
    }
    return m;
  };
  static constexpr std::array<std::array<double, 2>, 4> kBands = {{{0, 500}, {500, 1000}, {1000, 2000}, {2000, 4000}}};

  std::array<std::vector<double>, kDescriptorCount> lld;
  std::vector<bool> voiced(n_frames);
  std::array<std::vector<double>, 4> band_voiced, band_unvoiced;
  std::vector<double> f0_time, hammarberg;
  std::vector<double> prev_mag;

  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * fc.hop;
    double ms = 0.0;
    std::size_t crossings = 0;
    for (std::size_t i = 0; i < fc.win; ++i) {
      const double v = x[start + i];
      ms += v * v;
      if (i > 0 && ((x[start + i - 1] >= 0.0f) != (v >= 0.0))) ++crossings;
    }
    ms /= static_cast<double>(fc.win);
    lld[0].push_back(std::log(std::max(ms, eps)));
    lld[1].push_back(static_cast<double>(crossings) / static_cast<double>(fc.win - 1));

    const PitchEstimate pe = estimate_pitch(x, start, pc);
    voiced[t] = pe.voiced;
    if (pe.voiced) {
      lld[2].push_back(pe.f0);
      f0_time.push_back(static_cast<double>(t) * hop_s);
    }
    lld[3].push_back(pe.voicing);

    double total = 0.0, weighted = 0.0;
    std::vector<double> mag(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double p = power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
      total += p;
      weighted += p * static_cast<double>(k) * bin_hz;
      mag[k] = std::sqrt(p);
    }
    const bool silent = total < eps;
    lld[4].push_back(silent ? 0.0 : weighted / total);

    std::vector<double> freq_khz(n_bins), log_p(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
      freq_khz[k] = static_cast<double>(k) * bin_hz / 1000.0;
      log_p[k] = std::log(power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) + eps);
    }
    lld[5].push_back(silent ? 0.0 : detail::slope(freq_khz, log_p));

    const double mag_sum = std::accumulate(mag.begin(), mag.end(), 0.0);
    if (mag_sum > 0.0)
      for (double& m : mag) m /= mag_sum;
    double flux = 0.0;
    if (!prev_mag.empty())
      for (std::size_t k = 0; k < n_bins; ++k) flux += (mag[k] - prev_mag[k]) * (mag[k] - prev_mag[k]);
    lld[6].push_back(flux);
    prev_mag = std::move(mag);

    double rolloff = 0.0;
    if (!silent) {
      double cum = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) {
        cum += power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
        if (cum >= 0.85 * total) {
          rolloff = static_cast<double>(k) * bin_hz;
          break;
        }
      }
    }
    lld[7].push_back(rolloff);

    for (std::size_t b = 0; b < kBands.size(); ++b) {
      const double ratio = std::log((band_power(t, kBands[b][0], kBands[b][1]) + eps) / (total + eps));
      lld[8 + b].push_back(ratio);
      (pe.voiced ? band_voiced : band_unvoiced)[b].push_back(ratio);
    }
    if (!silent) {
      hammarberg.push_back(std::log((band_max(t, 0, 2000) + eps) / (band_max(t, 2000, 5000) + eps)));
    }
  }

  std::vector<double> out;
  out.reserve(kFunctionalDim);
  for (const auto& d : lld) {
    const auto s = detail::summarize(d);
    out.insert(out.end(), s.begin(), s.end());
  }

  std::size_t n_voiced = 0, voiced_segs = 0, unvoiced_segs = 0, voiced_run = 0, unvoiced_run = 0;
  for (std::size_t t = 0; t < n_frames; ++t) {
    if (voiced[t]) {
      ++n_voiced;
      ++voiced_run;
      if (t == 0 || !voiced[t - 1]) ++voiced_segs;
    } else {
      ++unvoiced_run;
      if (t == 0 || voiced[t - 1]) ++unvoiced_segs;
    }
  }
  out.push_back(static_cast<double>(n_voiced) / static_cast<double>(n_frames));
  out.push_back(voiced_segs ? static_cast<double>(voiced_run) * hop_s / static_cast<double>(voiced_segs) : 0.0);
  out.push_back(unvoiced_segs ? static_cast<double>(unvoiced_run) * hop_s / static_cast<double>(unvoiced_segs) : 0.0);
  out.push_back(static_cast<double>(voiced_segs) / duration);

  const std::vector<double>& energy = lld[0];
  const double energy_mean = detail::mean_of(energy);
  std::size_t peaks = 0;
  for (std::size_t t = 1; t + 1 < n_frames; ++t) {
    if (energy[t] > energy[t - 1] && energy[t] >= energy[t + 1] && energy[t] > energy_mean) ++peaks;
  }
  out.push_back(static_cast<double>(peaks) / duration);

  for (const auto& b : band_voiced) out.push_back(detail::mean_of(b));
  for (const auto& b : band_unvoiced) out.push_back(detail::mean_of(b));

  std::vector<double> times(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) times[t] = static_cast<double>(t) * hop_s;
  out.push_back(detail::slope(times, energy));
  out.push_back(detail::slope(f0_time, lld[2]));
  out.push_back(detail::mean_of(hammarberg));

  for (double v : out) {
    if (!std::isfinite(v)) throw NumericError("functional features produced a non-finite value");
  }
  return out;
}

}  // namespace adaptune::features
