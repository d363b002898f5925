#include "pwmini/matrix_io.hpp"

#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "pwmini/error.hpp"
#include "pwmini/wire.hpp"

namespace pwmini::matrix_io {

namespace {

std::vector<std::byte> header(std::uint32_t rows, std::uint32_t cols, transport::ElemType type) {
  std::vector<std::byte> out;
  wire::put_le(out, kMagic);
  wire::put_le(out, rows);
  wire::put_le(out, cols);
  wire::put_le(out, static_cast<std::uint32_t>(type));
  return out;
}

void emit(std::ostream& os, const std::vector<std::byte>& bytes) {
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("matrix write failed");
}

void check_size(std::uint32_t rows, std::uint32_t cols, std::size_t n) {
  if (static_cast<std::size_t>(rows) * cols != n) throw InvalidArgument("matrix data does not match rows x cols");
}

}  // namespace

void write(std::ostream& os, std::uint32_t rows, std::uint32_t cols, std::span<const double> data) {
  check_size(rows, cols, data.size());
  auto bytes = header(rows, cols, transport::ElemType::f64);
  for (double v : data) wire::put_f64(bytes, v);
  emit(os, bytes);
}

void write(std::ostream& os, std::uint32_t rows, std::uint32_t cols, std::span<const std::complex<double>> data) {
  check_size(rows, cols, data.size());
  auto bytes = header(rows, cols, transport::ElemType::c128);
  for (const auto& v : data) wire::put_c128(bytes, v);
  emit(os, bytes);
}

MatrixFile read(std::istream& is) {
  std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  wire::Reader rd(std::span<const std::byte>(reinterpret_cast<const std::byte*>(raw.data()), raw.size()));
  if (rd.remaining() < 16) throw Error("truncated matrix header");
  if (rd.get_le<std::uint32_t>() != kMagic) throw Error("not a matrix file (bad magic)");
  MatrixFile m;
  m.rows = rd.get_le<std::uint32_t>();
  m.cols = rd.get_le<std::uint32_t>();
  const auto code = rd.get_le<std::uint32_t>();
  const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
  if (code == static_cast<std::uint32_t>(transport::ElemType::f64)) {
    m.type = transport::ElemType::f64;
    if (rd.remaining() != 8 * n) throw Error("matrix payload length does not match header");
    m.real.resize(n);
    for (auto& v : m.real) v = rd.get_f64();
  } else if (code == static_cast<std::uint32_t>(transport::ElemType::c128)) {
    m.type = transport::ElemType::c128;
    if (rd.remaining() != 16 * n) throw Error("matrix payload length does not match header");
    m.cplx.resize(n);
    for (auto& v : m.cplx) v = rd.get_c128();
  } else {
    throw Error("unsupported matrix element type " + std::to_string(code));
  }
  return m;
}

void write_file(const std::string& path, std::uint32_t rows, std::uint32_t cols, std::span<const double> data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(path + ": cannot open for writing");
  write(os, rows, cols, data);
}

void write_file(const std::string& path, std::uint32_t rows, std::uint32_t cols,
                std::span<const std::complex<double>> data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(path + ": cannot open for writing");
  write(os, rows, cols, data);
}

MatrixFile read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(path + ": cannot open");
  return read(is);
}

}  // namespace pwmini::matrix_io
