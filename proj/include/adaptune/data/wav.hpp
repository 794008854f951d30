#pragma once

// RIFF/WAVE PCM16 mono reader and writer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "adaptune/error.hpp"
#include "adaptune/features/audio.hpp"

namespace adaptune::data {

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

inline std::string hex_dump(const std::vector<unsigned char>& bytes, std::size_t n = 44) {
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (std::size_t i = 0; i < std::min(n, bytes.size()); ++i) os << (i ? " " : "") << std::setw(2) << int(bytes[i]);
  return os.str();
}

}  // namespace detail

/// Parses WAV bytes. `name` is used in error messages.
inline features::AudioClip parse_wav(const std::vector<unsigned char>& bytes, const std::string& name = "<memory>") {
  const auto fail = [&](const std::string& why, const std::string& fmt = "") {
    throw FormatError(name + ": " + why + (fmt.empty() ? "" : " [" + fmt + "]") + " header: " + detail::hex_dump(bytes));
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) fail("chunk '" + std::string(reinterpret_cast<const char*>(chunk), 4) + "' overruns the file");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) fail("fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      format = detail::read_u16(f);
      channels = detail::read_u16(f + 2);
      rate = detail::read_u32(f + 4);
      bits = detail::read_u16(f + 14);
      if (format == 0xFFFE && size >= 40) format = detail::read_u16(f + 24);  // extensible: sub-format
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      std::ostringstream fmt;
      fmt << "format=" << format << " channels=" << channels << " rate=" << rate << " bits=" << bits;
      if (format != 1 || bits != 16) fail("unsupported encoding, only PCM 16-bit is accepted", fmt.str());
      if (channels != 1) fail("unsupported channel count, only mono is accepted", fmt.str());
      if (rate == 0) fail("zero sample rate", fmt.str());
      if (size % 2 != 0) fail("odd data chunk size for 16-bit samples", fmt.str());
      features::AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::read_u16(bytes.data() + body + 2 * i));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return clip;
    }
    pos = body + size + (size & 1);
  }
  fail(have_fmt ? "no data chunk" : "no fmt chunk");
  return {};
}

inline features::AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes, path.string());
}

/// PCM16 encoding: round(x·32768) clamped to the int16 range.
inline std::vector<unsigned char> encode_wav(const features::AudioClip& clip) {
  if (clip.sample_rate == 0) throw RateError("cannot encode a clip with zero sample rate");
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<unsigned char> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(b, 16);
  detail::put_u16(b, 1);
  detail::put_u16(b, 1);
  detail::put_u32(b, clip.sample_rate);
  detail::put_u32(b, clip.sample_rate * 2);
  detail::put_u16(b, 2);
  detail::put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(b, data_bytes);
  for (float x : clip.samples) {
    if (!std::isfinite(x)) throw NumericError("cannot encode a non-finite sample");
    const long v = std::clamp(std::lround(static_cast<double>(x) * 32768.0), -32768L, 32767L);
    detail::put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  return b;
}

inline void write_wav(const std::filesystem::path& path, const features::AudioClip& clip) {
  const std::vector<unsigned char> bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write audio file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing audio file " + path.string());
}

}  // namespace adaptune::data
