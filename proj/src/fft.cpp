#include "pwmini/fft.hpp"

#include <cmath>
#include <numbers>

#include "pwmini/error.hpp"

namespace pwmini::fft {

namespace {

std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> f;
  while (n % 4 == 0) {
    f.push_back(4);
    n /= 4;
  }
  for (std::size_t p : {2u, 3u, 5u}) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  for (std::size_t p = 7; p * p <= n; p += 2) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  if (n > 1) f.push_back(n);
  return f;
}

}  // namespace

Fft1d::Fft1d(std::size_t n) : n_(n) {
  if (n == 0) throw InvalidArgument("FFT length must be positive");
  factors_ = factorize(n);
  twiddle_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
    twiddle_[j] = {std::cos(angle), std::sin(angle)};
  }
}

// Decimation in time: the p interleaved subsequences are transformed
// recursively into consecutive runs of out, then combined by a radix-p
// butterfly that reads and writes the same p slots for each k.
void Fft1d::run(const cplx* in, std::size_t stride, cplx* out, std::size_t n, std::size_t level,
                bool inverse) const {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = factors_[level];
  const std::size_t m = n / p;
  for (std::size_t q = 0; q < p; ++q) run(in + q * stride, stride * p, out + q * m, m, level + 1, inverse);

  const std::size_t step = n_ / n;  // twiddle index scale for W_n
  auto w = [&](std::size_t e) {
    cplx t = twiddle_[(e * step) % n_];
    return inverse ? std::conj(t) : t;
  };

  if (p == 2) {
    for (std::size_t k = 0; k < m; ++k) {
      cplx a = out[k];
      cplx b = out[k + m] * w(k);
      out[k] = a + b;
      out[k + m] = a - b;
    }
    return;
  }
  if (p == 4) {
    const cplx mi = inverse ? cplx(0.0, 1.0) : cplx(0.0, -1.0);  // W_4
    for (std::size_t k = 0; k < m; ++k) {
      cplx a0 = out[k];
      cplx a1 = out[k + m] * w(k);
      cplx a2 = out[k + 2 * m] * w(2 * k);
      cplx a3 = out[k + 3 * m] * w(3 * k);
      cplx s02 = a0 + a2, d02 = a0 - a2;
      cplx s13 = a1 + a3, d13 = (a1 - a3) * mi;
      out[k] = s02 + s13;
      out[k + m] = d02 + d13;
      out[k + 2 * m] = s02 - s13;
      out[k + 3 * m] = d02 - d13;
    }
    return;
  }

  std::vector<cplx> t(p), r(p);
  const std::size_t root_step = n_ / p;  // W_p
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t q = 0; q < p; ++q) t[q] = out[k + q * m] * w(q * k);
    for (std::size_t s = 0; s < p; ++s) {
      cplx acc = t[0];
      for (std::size_t q = 1; q < p; ++q) {
        cplx root = twiddle_[((q * s) % p) * root_step];
        acc += t[q] * (inverse ? std::conj(root) : root);
      }
      r[s] = acc;
    }
    for (std::size_t s = 0; s < p; ++s) out[k + s * m] = r[s];
  }
}

void Fft1d::forward(std::span<const cplx> in, std::span<cplx> out) const {
  if (in.size() != n_ || out.size() != n_) throw InvalidArgument("FFT length mismatch");
  run(in.data(), 1, out.data(), n_, 0, false);
}

void Fft1d::inverse(std::span<const cplx> in, std::span<cplx> out) const {
  if (in.size() != n_ || out.size() != n_) throw InvalidArgument("FFT length mismatch");
  run(in.data(), 1, out.data(), n_, 0, true);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& v : out) v *= scale;
}

void Fft1d::forward(std::span<cplx> data) const {
  std::vector<cplx> in(data.begin(), data.end());
  forward(in, data);
}

void Fft1d::inverse(std::span<cplx> data) const {
  std::vector<cplx> in(data.begin(), data.end());
  inverse(in, data);
}

Fft3d::Fft3d(std::size_t nx, std::size_t ny, std::size_t nz) : nx_(nx), ny_(ny), nz_(nz) {}

void Fft3d::along(std::span<cplx> data, int axis, bool inverse) const {
  const std::size_t nx = nx_.size(), ny = ny_.size(), nz = nz_.size();
  const Fft1d& plan = axis == 0 ? nx_ : axis == 1 ? ny_ : nz_;
  const std::size_t len = plan.size();
  if (len == 1) return;
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? nx : nx * ny;
  const std::size_t lines = nx * ny * nz / len;
  std::vector<cplx> line(len), res(len);
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t base;
    if (axis == 0) {
      base = l * nx;
    } else if (axis == 1) {
      base = (l % nx) + nx * ny * (l / nx);
    } else {
      base = l;
    }
    for (std::size_t k = 0; k < len; ++k) line[k] = data[base + k * stride];
    if (inverse) {
      plan.inverse(line, res);
    } else {
      plan.forward(line, res);
    }
    for (std::size_t k = 0; k < len; ++k) data[base + k * stride] = res[k];
  }
}

void Fft3d::forward(std::span<cplx> data) const {
  if (data.size() != points()) throw InvalidArgument("FFT grid size mismatch");
  for (int axis = 0; axis < 3; ++axis) along(data, axis, false);
}

void Fft3d::inverse(std::span<cplx> data) const {
  if (data.size() != points()) throw InvalidArgument("FFT grid size mismatch");
  for (int axis = 0; axis < 3; ++axis) along(data, axis, true);
}

std::size_t next_fft_size(std::size_t n) {
  if (n <= 1) return 1;
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u, 7u, 11u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

}  // namespace pwmini::fft
