#pragma once

// Little-endian encoding helpers shared by the socket frames, the matrix
// file format and the pseudopotential shard records.

#include <bit>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "pwmini/error.hpp"

namespace pwmini::wire {

template <typename U>
inline void put_le(std::vector<std::byte>& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xFFu));
  }
}

inline void put_f64(std::vector<std::byte>& out, double v) {
  put_le(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_c128(std::vector<std::byte>& out, std::complex<double> v) {
  put_f64(out, v.real());
  put_f64(out, v.imag());
}

// Sequential reader over a byte span; throws on truncation.
class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename U>
  U get_le() {
    static_assert(std::is_unsigned_v<U>);
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(std::to_integer<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  std::complex<double> get_c128() {
    double re = get_f64();
    double im = get_f64();
    return {re, im};
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error("truncated record");
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace pwmini::wire
