#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pwmini/transport.hpp"

namespace testutil {

using pwmini::transport::World;
using pwmini::transport::WorldOptions;

// Runs `body` on P ranks and collects each rank's return value by rank.
template <typename F>
auto per_rank(int procs, F body, WorldOptions opts = {}) {
  using R = decltype(body(std::declval<World&>()));
  std::vector<R> out(static_cast<std::size_t>(procs));
  opts.size = procs;
  pwmini::transport::run_world(opts, [&](World& w) { out[static_cast<std::size_t>(w.rank())] = body(w); });
  return out;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline std::string source_path(const std::string& rel) { return std::string(PWMINI_SOURCE_DIR) + "/" + rel; }

}  // namespace testutil
