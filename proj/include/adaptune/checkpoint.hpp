#pragma once

// Checkpoint container:
//   "PEFTCKPT" | u32 version = 1 | u32 entry count | entries
//   entry: u32 name length | UTF-8 name | u8 dtype (0 = f64) | u8 ndim |
//          u32 dims[ndim] | ndim-product f64 values
// Every integer and value is little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unordered_set>
#include <vector>

#include "adaptune/error.hpp"
#include "adaptune/tensor.hpp"

namespace adaptune::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[8] = {'P', 'E', 'F', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 0;

struct Entry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  std::size_t count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
  friend bool operator==(const Entry&, const Entry&) = default;
};

/// Ordered named f64 arrays.
class Checkpoint {
 public:
  void add(std::string name, std::vector<std::uint32_t> dims, std::vector<double> data) {
    Entry e{std::move(name), std::move(dims), std::move(data)};
    if (e.name.empty()) throw ConfigError("checkpoint entry needs a name");
    if (e.dims.size() > 255) throw DimensionError("checkpoint entry '" + e.name + "' has too many dimensions");
    if (e.count() != e.data.size()) {
      throw DimensionError("checkpoint entry '" + e.name + "': " + std::to_string(e.data.size()) +
                           " values for dims of size " + std::to_string(e.count()));
    }
    if (find(e.name)) throw ConfigError("duplicate checkpoint entry '" + e.name + "'");
    entries_.push_back(std::move(e));
  }

  void add(const std::string& name, const Tensor& t) {
    std::vector<std::uint32_t> dims;
    for (std::size_t d : t.shape()) dims.push_back(static_cast<std::uint32_t>(d));
    add(name, std::move(dims), t.values());
  }

  void add_scalars(const std::string& name, std::vector<double> values) {
    const auto n = static_cast<std::uint32_t>(values.size());
    add(name, {n}, std::move(values));
  }

  const Entry* find(const std::string& name) const {
    for (const Entry& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const Entry& at(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw FormatError("checkpoint has no entry '" + name + "'");
    return *e;
  }

  /// Entry as a tensor (rank 1 to 3).
  Tensor tensor(const std::string& name) const {
    const Entry& e = at(name);
    Shape shape(e.dims.begin(), e.dims.end());
    try {
      return Tensor(std::move(shape), e.data);
    } catch (const Error& err) {
      throw FormatError("checkpoint entry '" + name + "': " + err.what());
    }
  }

  const std::vector<double>& values(const std::string& name) const { return at(name).data; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

 private:
  std::vector<Entry> entries_;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::string source) : b_(b), source_(std::move(source)) {}

  const unsigned char* take(std::size_t n, const char* what) {
    if (n > b_.size() - pos_) {
      throw FormatError(source_ + ": truncated checkpoint while reading " + what + " at byte " + std::to_string(pos_));
    }
    const unsigned char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    const unsigned char* p = take(4, what);
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  std::uint8_t u8(const char* what) { return *take(1, what); }
  bool done() const { return pos_ == b_.size(); }
  const std::string& source() const { return source_; }

 private:
  const std::vector<unsigned char>& b_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize(const Checkpoint& c) {
  std::vector<unsigned char> b(std::begin(kMagic), std::end(kMagic));
  detail::put_u32(b, kVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(c.size()));
  for (const Entry& e : c.entries()) {
    detail::put_u32(b, static_cast<std::uint32_t>(e.name.size()));
    b.insert(b.end(), e.name.begin(), e.name.end());
    b.push_back(kDtypeF64);
    b.push_back(static_cast<unsigned char>(e.dims.size()));
    for (std::uint32_t d : e.dims) detail::put_u32(b, d);
    const std::size_t off = b.size();
    b.resize(off + e.data.size() * sizeof(double));
    if (!e.data.empty()) std::memcpy(b.data() + off, e.data.data(), e.data.size() * sizeof(double));
  }
  return b;
}

inline Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::string& source = "<memory>") {
  detail::Reader r(bytes, source);
  if (std::memcmp(r.take(8, "magic"), kMagic, 8) != 0) throw FormatError(source + ": not a PEFTCKPT checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("entry count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    const unsigned char* name = r.take(len, "name");
    Entry e;
    e.name.assign(reinterpret_cast<const char*>(name), len);
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF64) {
      throw FormatError(source + ": entry '" + e.name + "' has unsupported dtype " + std::to_string(dtype));
    }
    const std::uint8_t ndim = r.u8("ndim");
    for (std::uint8_t d = 0; d < ndim; ++d) e.dims.push_back(r.u32("dims"));
    std::size_t n = 1;
    for (std::uint32_t d : e.dims) {
      if (d != 0 && n > bytes.size() / d) throw FormatError(source + ": entry '" + e.name + "' dims exceed the file size");
      n *= d;
    }
    e.data.resize(n);
    const unsigned char* payload = r.take(n * sizeof(double), "payload");
    if (n) std::memcpy(e.data.data(), payload, n * sizeof(double));
    if (c.contains(e.name)) throw FormatError(source + ": duplicate entry '" + e.name + "'");
    c.add(std::move(e.name), std::move(e.dims), std::move(e.data));
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after the last entry");
  return c;
}

inline void save(const Checkpoint& c, const std::filesystem::path& path) {
  const std::vector<unsigned char> b = serialize(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(b, path.string());
}

}  // namespace adaptune::ckpt
