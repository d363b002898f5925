// Rank-local kernel timings: in-place vs mapping-matrix packing and the
// OpenMP nonlocal kernel vs its serial reference.

#include <benchmark/benchmark.h>

#include <complex>
#include <random>
#include <vector>

#include "pwmini/layout.hpp"
#include "pwmini/parallel.hpp"
#include "pwmini/pseudo.hpp"

using namespace pwmini;

namespace {

std::vector<double> random_block(std::size_t n) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void BM_PackInPlace(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1));
  const int p = static_cast<int>(state.range(2));
  const auto plan = layout::SubBlockPlan::make(r, c, p);
  auto v = random_block(r * c);
  for (auto _ : state) {
    layout::pack_in_place(std::span<double>(v), plan);
    layout::unpack_in_place(std::span<double>(v), plan);
    benchmark::DoNotOptimize(v.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * 2 * r * c * sizeof(double)));
}

void BM_PackReference(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0)), c = static_cast<std::size_t>(state.range(1));
  const int p = static_cast<int>(state.range(2));
  const auto plan = layout::SubBlockPlan::make(r, c, p);
  auto v = random_block(r * c);
  for (auto _ : state) {
    layout::pack_reference(std::span<double>(v), plan);
    layout::unpack_reference(std::span<double>(v), plan);
    benchmark::DoNotOptimize(v.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * 2 * r * c * sizeof(double)));
}

struct VnlCase {
  RealSpaceGrid grid{{16, 16, 16}, {10.0, 10.0, 10.0}};
  std::vector<pseudo::PseudoEntry> entries;
  std::vector<std::complex<double>> wf;
  std::size_t cols;

  explicit VnlCase(std::size_t ncols) : cols(ncols) {
    pseudo::KindRecord k;
    k.atomic_number = 14;
    k.projector_sigma = 1.0;
    k.weights = {0.5, 0.2, 0.2, 0.2};
    for (std::uint64_t a = 0; a < 8; ++a)
      entries.push_back(pseudo::synthetic_entry(a, k, {1.2 * a, 0.7 * a, 5.0}, grid));
    const auto re = random_block(grid.points() * cols);
    wf.assign(re.begin(), re.end());
  }
};

void BM_VnlSerial(benchmark::State& state) {
  VnlCase vc(static_cast<std::size_t>(state.range(0)));
  std::vector<std::complex<double>> out(vc.wf.size());
  for (auto _ : state) {
    pseudo::apply_vnl_block_reference(vc.entries, vc.wf, vc.grid.points(), vc.cols, vc.grid.dv(), out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_VnlOpenMP(benchmark::State& state) {
  VnlCase vc(static_cast<std::size_t>(state.range(0)));
  std::vector<std::complex<double>> out(vc.wf.size());
  set_kernel_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) {
    for (const auto& e : vc.entries) pseudo::apply_entry(e, vc.wf, vc.grid.points(), vc.cols, vc.grid.dv(), out);
    benchmark::DoNotOptimize(out.data());
  }
  set_kernel_threads(1);
}

}  // namespace

BENCHMARK(BM_PackInPlace)->Args({4096, 64, 16})->Args({4099, 61, 16})->Args({16384, 32, 64});
BENCHMARK(BM_PackReference)->Args({4096, 64, 16})->Args({4099, 61, 16})->Args({16384, 32, 64});
BENCHMARK(BM_VnlSerial)->Arg(16);
BENCHMARK(BM_VnlOpenMP)->Args({16, 1})->Args({16, 2})->Args({16, 4})->UseRealTime();

BENCHMARK_MAIN();
