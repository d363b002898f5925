#pragma once

// Mixed-radix complex FFT. Lengths factor into any primes; radices 4, 2, 3
// and 5 are taken first and larger primes fall back to an O(p) butterfly.
//
// Forward:  X[k] = sum_n x[n] exp(-2 pi i k n / N)
// Inverse:  x[n] = (1/N) sum_k X[k] exp(+2 pi i k n / N)

#include <array>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace pwmini::fft {

using cplx = std::complex<double>;

class Fft1d {
 public:
  explicit Fft1d(std::size_t n);

  std::size_t size() const { return n_; }
  const std::vector<std::size_t>& factors() const { return factors_; }

  // Out-of-place transforms of contiguous data; `in` and `out` must not alias.
  void forward(std::span<const cplx> in, std::span<cplx> out) const;
  void inverse(std::span<const cplx> in, std::span<cplx> out) const;

  // In-place convenience wrappers (allocate one scratch line).
  void forward(std::span<cplx> data) const;
  void inverse(std::span<cplx> data) const;

 private:
  void run(const cplx* in, std::size_t stride, cplx* out, std::size_t n, std::size_t level, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<cplx> twiddle_;  // exp(-2 pi i j / N), j < N
};

// 3D transform of an nx * ny * nz grid stored with x fastest:
// index = x + nx * (y + ny * z). Thread-safe; scratch is per call.
class Fft3d {
 public:
  Fft3d(std::size_t nx, std::size_t ny, std::size_t nz);

  std::array<std::size_t, 3> shape() const { return {nx_.size(), ny_.size(), nz_.size()}; }
  std::size_t points() const { return nx_.size() * ny_.size() * nz_.size(); }

  void forward(std::span<cplx> data) const;
  void inverse(std::span<cplx> data) const;

 private:
  void along(std::span<cplx> data, int axis, bool inverse) const;

  Fft1d nx_, ny_, nz_;
};

// Frequency index of FFT bin k in a length-n transform: k for k <= n/2,
// k - n above.
inline long signed_frequency(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

// Smallest m >= n whose prime factors all lie in {2, 3, 5, 7, 11}.
std::size_t next_fft_size(std::size_t n);

}  // namespace pwmini::fft
