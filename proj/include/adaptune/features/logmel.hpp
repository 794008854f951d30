#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <limits>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "adaptune/error.hpp"
#include "adaptune/features/audio.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::features {

struct FrameConfig {
  std::size_t win = 400;
  std::size_t hop = 160;
  std::size_t n_fft = 512;
};

inline constexpr double kLogFloor = 1e-10;

/// 1 + floor((N − win)/hop); throws LengthError when N < win.
inline std::size_t frame_count(std::size_t n_samples, const FrameConfig& fc = {}) {
  if (n_samples < fc.win) {
    throw LengthError("need at least " + std::to_string(fc.win) + " samples, got " + std::to_string(n_samples));
  }
  return 1 + (n_samples - fc.win) / fc.hop;
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequencies (Hz) of the n_mels triangular filters spanning [fmin, fmax].
inline std::vector<double> mel_centers(std::size_t n_mels = 80, double fmin = 0.0, double fmax = 8000.0) {
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> c(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    c[m] = mel_to_hz(lo + (hi - lo) * static_cast<double>(m + 1) / static_cast<double>(n_mels + 1));
  }
  return c;
}

/// n_mels × (n_fft/2 + 1) triangular filterbank, HTK mel scale, unnormalized.
inline RowMatrix mel_filterbank(std::size_t n_mels = 80, std::size_t n_fft = 512, double sample_rate = 16000.0,
                                double fmin = 0.0, double fmax = 8000.0) {
  if (n_mels == 0) throw ConfigError("n_mels must be positive");
  const std::size_t n_bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  RowMatrix fb = RowMatrix::Zero(static_cast<Eigen::Index>(n_mels), static_cast<Eigen::Index>(n_bins));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > left && f <= center) w = (f - left) / (center - left);
      else if (f > center && f < right) w = (right - f) / (right - center);
      fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = w;
    }
  }
  return fb;
}

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

/// Shared r2c plan for one transform size. Planning is serialized; execution
/// goes through the new-array interface with per-call buffers.
inline fftw_plan r2c_plan(std::size_t n_fft) {
  static std::mutex mu;
  static std::vector<std::pair<std::size_t, fftw_plan>> plans;
  std::lock_guard lock(mu);
  for (const auto& [n, p] : plans)
    if (n == n_fft) return p;
  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n_fft));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n_fft / 2 + 1));
  fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in.get(), out.get(), FFTW_ESTIMATE);
  plans.emplace_back(n_fft, p);
  return p;
}

}  // namespace detail

/// T × (n_fft/2 + 1) power spectra of Hann-windowed frames (no centering pad).
inline RowMatrix power_spectrogram(std::span<const float> samples, const FrameConfig& fc = {}) {
  const std::size_t n_frames = frame_count(samples.size(), fc);
  const std::size_t n_bins = fc.n_fft / 2 + 1;
  const std::vector<double> window = hann_window(fc.win);
  fftw_plan plan = detail::r2c_plan(fc.n_fft);
  std::unique_ptr<double, detail::FftwFree> in(fftw_alloc_real(fc.n_fft));
  std::unique_ptr<fftw_complex, detail::FftwFree> out(fftw_alloc_complex(n_bins));
  RowMatrix power(static_cast<Eigen::Index>(n_frames), static_cast<Eigen::Index>(n_bins));
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * fc.hop;
    for (std::size_t i = 0; i < fc.n_fft; ++i) {
      in.get()[i] = i < fc.win ? window[i] * static_cast<double>(samples[start + i]) : 0.0;
    }
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = re * re + im * im;
    }
  }
  return power;
}

/// T × n_mels natural-log mel energies, floored at 1e-10 before the log.
inline Tensor log_mel(const AudioClip& clip, std::size_t n_mels = 80, const FrameConfig& fc = {}) {
  if (clip.sample_rate != kTargetRate) {
    throw RateError("log_mel expects 16000 Hz input, got " + std::to_string(clip.sample_rate));
  }
  const RowMatrix power = power_spectrogram(clip.samples, fc);
  const RowMatrix fb = mel_filterbank(n_mels, fc.n_fft, kTargetRate);
  RowMatrix mel = power * fb.transpose();
  Tensor out = Tensor::zeros({static_cast<std::size_t>(mel.rows()), n_mels});
  double* dst = out.data().data();
  for (Eigen::Index i = 0; i < mel.size(); ++i) dst[i] = std::log(std::max(mel.data()[i], kLogFloor));
  return out;
}

/// Encoder-input scaling of natural-log mel energies: convert to log10,
/// clamp to 8 decades below the clip maximum, then map by (x + 4)/4.
inline Tensor normalize_log_mel(const Tensor& ln_mel) {
  Tensor out = ln_mel;
  double peak = -std::numeric_limits<double>::infinity();
  for (double& v : out.values()) {
    v /= std::numbers::ln10;
    peak = std::max(peak, v);
  }
  for (double& v : out.values()) v = (std::max(v, peak - 8.0) + 4.0) / 4.0;
  return out;
}

}  // namespace adaptune::features
