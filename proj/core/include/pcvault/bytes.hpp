#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pcvault/error.hpp"

namespace pcvault {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string_view as_chars(ByteView b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

template <typename U>
constexpr U byteswap_u(U u) {
  U r = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    r = static_cast<U>((r << 8) | ((u >> (8 * i)) & 0xFF));
  }
  return r;
}

// Little-endian load/store, independent of host byte order.
template <typename T>
  requires std::is_arithmetic_v<T>
inline T load_le(const std::uint8_t* p) {
  if constexpr (sizeof(T) == 1) {
    T v;
    std::memcpy(&v, p, 1);
    return v;
  } else {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    U u;
    std::memcpy(&u, p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) u = byteswap_u(u);
    T v;
    std::memcpy(&v, &u, sizeof(T));
    return v;
  }
}

template <typename T>
  requires std::is_arithmetic_v<T>
inline void store_le(std::uint8_t* p, T v) {
  if constexpr (sizeof(T) == 1) {
    std::memcpy(p, &v, 1);
  } else {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
    U u;
    std::memcpy(&u, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) u = byteswap_u(u);
    std::memcpy(p, &u, sizeof(U));
  }
}

// Appends little-endian fields to a growing buffer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    const auto at = out_.size();
    out_.resize(at + sizeof(T));
    store_le(out_.data() + at, v);
  }
  void put_bytes(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void put_string(std::string_view s) { put_bytes(as_bytes(s)); }

 private:
  Bytes& out_;
};

// Bounds-checked little-endian cursor. Running past the end throws the
// error code chosen by the caller, so each wire format reports its own kind.
class ByteReader {
 public:
  ByteReader(ByteView data, Errc on_short) : data_(data), on_short_(on_short) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = load_le<T>(data_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }
  ByteView take(std::size_t n) {
    need(n);
    auto v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }
  std::string take_string(std::size_t n) { return std::string(as_chars(take(n))); }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(on_short_, "unexpected end of data");
  }

  ByteView data_;
  std::size_t pos_ = 0;
  Errc on_short_;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, ByteView data);

}  // namespace pcvault
