#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "adaptune/error.hpp"

namespace adaptune::features {

inline constexpr std::uint32_t kTargetRate = 16000;

/// Mono waveform, samples nominally in [−1, 1].
struct AudioClip {
  std::vector<float> samples;
  std::uint32_t sample_rate = kTargetRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    if (sample_rate == 0) throw RateError("sample rate must be positive");
    if (samples.empty()) throw LengthError("audio clip has no samples");
  }

  friend bool operator==(const AudioClip&, const AudioClip&) = default;
};

namespace detail {

/// Polyphase windowed-sinc kernel for a rational ratio up/down.
/// Row p holds the taps for output phase p/up; taps per phase is fixed.
class SincKernel {
 public:
  static constexpr std::ptrdiff_t kTaps = 64;
  static constexpr std::ptrdiff_t kHalf = kTaps / 2;
  static constexpr double kBeta = 8.0;      // Kaiser shape
  static constexpr double kRolloff = 0.95;   // fraction of the narrower Nyquist kept

  SincKernel(std::size_t up, std::size_t down) : up_(up), taps_(up * kTaps) {
    const double cutoff = kRolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
    const double norm = std::cyl_bessel_i(0.0, kBeta);
    for (std::size_t p = 0; p < up; ++p) {
      const double frac = static_cast<double>(p) / static_cast<double>(up);
      double sum = 0.0;
      for (std::ptrdiff_t k = 0; k < kTaps; ++k) {
        // tap k reads input sample base + k − (kHalf − 1)
        const double x = static_cast<double>(k - (kHalf - 1)) - frac;
        const double r = x / static_cast<double>(kHalf);
        const double window = std::abs(r) < 1.0 ? std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / norm : 0.0;
        const double arg = std::numbers::pi * cutoff * x;
        const double sinc = x == 0.0 ? 1.0 : std::sin(arg) / arg;
        const double w = cutoff * sinc * window;
        taps_[p * kTaps + static_cast<std::size_t>(k)] = w;
        sum += w;
      }
      // unity gain at DC for every phase
      for (std::ptrdiff_t k = 0; k < kTaps; ++k) taps_[p * kTaps + static_cast<std::size_t>(k)] /= sum;
    }
  }

  const double* phase(std::size_t p) const { return &taps_[p * kTaps]; }

 private:
  std::size_t up_;
  std::vector<double> taps_;
};

}  // namespace detail

/// Band-limited resampling to 16 kHz (Kaiser-windowed sinc, 64 taps per
/// phase). Output length is round(N·16000/rate); 16 kHz input is returned as is.
inline AudioClip resample_to_16k(const AudioClip& clip) {
  clip.validate();
  if (clip.sample_rate < 8000 || clip.sample_rate > 96000) {
    throw RateError("unsupported sample rate " + std::to_string(clip.sample_rate) + " Hz (accepted: 8000-96000)");
  }
  if (clip.sample_rate == kTargetRate) return clip;
  const std::size_t g = std::gcd(static_cast<std::size_t>(clip.sample_rate), static_cast<std::size_t>(kTargetRate));
  const std::size_t up = kTargetRate / g;
  const std::size_t down = clip.sample_rate / g;
  const std::size_t n_in = clip.samples.size();
  const std::size_t n_out = (n_in * kTargetRate + clip.sample_rate / 2) / clip.sample_rate;
  const detail::SincKernel kernel(up, down);

  AudioClip out;
  out.sample_rate = kTargetRate;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const std::size_t pos = n * down;
    const auto base = static_cast<std::ptrdiff_t>(pos / up);
    const double* taps = kernel.phase(pos % up);
    double acc = 0.0;
    for (std::ptrdiff_t k = 0; k < detail::SincKernel::kTaps; ++k) {
      const std::ptrdiff_t i = base + k - (detail::SincKernel::kHalf - 1);
      if (i >= 0 && i < static_cast<std::ptrdiff_t>(n_in)) acc += taps[k] * clip.samples[static_cast<std::size_t>(i)];
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

/// Zero-pads at the end or truncates the tail to exactly duration_s·16000 samples.
inline AudioClip pad_or_truncate(const AudioClip& clip, double duration_s = 30.0) {
  if (clip.sample_rate != kTargetRate) {
    throw RateError("pad_or_truncate expects 16000 Hz input, got " + std::to_string(clip.sample_rate));
  }
  if (!(duration_s > 0.0)) throw ConfigError("target duration must be positive");
  const auto target = static_cast<std::size_t>(std::llround(duration_s * kTargetRate));
  AudioClip out = clip;
  out.samples.resize(target, 0.0f);
  return out;
}

}  // namespace adaptune::features
