#pragma once

// Dense matrix files: a 16-byte header [u32 magic][u32 rows][u32 cols]
// [u32 element-type code] followed by the column-major elements, all
// little-endian. Element codes match transport::ElemType.

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pwmini/transport.hpp"

namespace pwmini::matrix_io {

inline constexpr std::uint32_t kMagic = 0x584D5750;  // "PWMX"

struct MatrixFile {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  transport::ElemType type = transport::ElemType::f64;
  std::vector<double> real;                 // when type == f64
  std::vector<std::complex<double>> cplx;   // when type == c128
};

void write(std::ostream& os, std::uint32_t rows, std::uint32_t cols, std::span<const double> data);
void write(std::ostream& os, std::uint32_t rows, std::uint32_t cols, std::span<const std::complex<double>> data);
MatrixFile read(std::istream& is);

void write_file(const std::string& path, std::uint32_t rows, std::uint32_t cols, std::span<const double> data);
void write_file(const std::string& path, std::uint32_t rows, std::uint32_t cols,
                std::span<const std::complex<double>> data);
MatrixFile read_file(const std::string& path);

}  // namespace pwmini::matrix_io
