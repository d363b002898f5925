#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace pwmini {

// Periodic orthorhombic real-space grid; point index = x + nx * (y + ny * z).
struct RealSpaceGrid {
  std::array<int, 3> n{1, 1, 1};
  std::array<double, 3> length{1.0, 1.0, 1.0};

  std::size_t points() const {
    return static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(n[2]);
  }
  double volume() const { return length[0] * length[1] * length[2]; }
  // Quadrature weight of one grid point.
  double dv() const { return volume() / static_cast<double>(points()); }

  std::array<double, 3> position(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(n[0]);
    const auto ny = static_cast<std::size_t>(n[1]);
    const std::size_t x = idx % nx, y = (idx / nx) % ny, z = idx / (nx * ny);
    return {length[0] * static_cast<double>(x) / n[0], length[1] * static_cast<double>(y) / n[1],
            length[2] * static_cast<double>(z) / n[2]};
  }

  // Minimum-image displacement a - b.
  std::array<double, 3> displacement(const std::array<double, 3>& a, const std::array<double, 3>& b) const {
    std::array<double, 3> d{};
    for (int k = 0; k < 3; ++k) {
      double v = a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)];
      const double l = length[static_cast<std::size_t>(k)];
      v -= l * std::nearbyint(v / l);
      d[static_cast<std::size_t>(k)] = v;
    }
    return d;
  }
};

}  // namespace pwmini
