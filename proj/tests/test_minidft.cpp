#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles/dft_oracle.hpp"
#include "pwmini/collectives.hpp"
#include "pwmini/minidft.hpp"
#include "test_util.hpp"

using namespace pwmini;
using namespace pwmini::dft;
using pwmini::transport::run_world;

namespace {

PwGrid small_grid(int n = 6, double len = 7.0) {
  PwGrid g;
  g.ecut = 1.0;
  g.length = {len, len * 1.1, len * 0.9};
  g.n = {n, n, n};
  return g;
}

std::vector<cplx> random_cplx(std::size_t n, std::uint64_t seed) {
  auto re = testutil::random_vector(n, seed), im = testutil::random_vector(n, seed + 7919);
  std::vector<cplx> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = {re[i], im[i]};
  return v;
}

double max_abs(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
  return e;
}

std::vector<pseudo::PseudoEntry> two_atom_entries(const PwGrid& g) {
  pseudo::KindRecord k;
  k.atomic_number = 1;
  k.projector_sigma = 0.9;
  k.weights = {0.4, -0.2, 0.1, 0.3};
  const auto rs = g.real_space();
  return {pseudo::synthetic_entry(0, k, {1.0, 2.0, 3.0}, rs), pseudo::synthetic_entry(1, k, {4.5, 4.0, 1.5}, rs)};
}

// H psi for a replicated global block through the distributed Hamiltonian.
std::vector<cplx> apply_global(const PwGrid& g, const std::vector<double>& v,
                               const std::vector<pseudo::PseudoEntry>& entries, const std::vector<cplx>& psi,
                               std::size_t cols, int procs) {
  auto got = testutil::per_rank(procs, [&](World& w) {
    Hamiltonian h(w, g, pseudo::make_shard(w.rank(), procs, entries), 2);
    h.set_local_potential(v);
    auto m = WaveMatrix::from_global(w, layout::Layout::column_block, g.points(), cols, psi);
    return layout::gather_global(h.apply(m));
  });
  return got[0];
}

}  // namespace

TEST_CASE("grid from cutoff") {
  CHECK(raw_grid_count(std::numbers::pi * std::numbers::pi / 2, 1.0) == 1);
  const double l84 = 84 * std::numbers::pi / std::sqrt(10.0);
  auto g = grid_from_ecut(5.0, {l84, l84, l84});
  CHECK(g.n == std::array<int, 3>{84, 84, 84});
  CHECK(g.points() == 592704);
  const double l88 = 88 * std::numbers::pi / std::sqrt(10.0);
  auto h = grid_from_ecut(5.0, {l88, l88, 2 * l88});
  CHECK(h.n == std::array<int, 3>{88, 88, 176});
  CHECK(h.points() == 1362944);
  CHECK(h.volume() == doctest::Approx(l88 * l88 * 2 * l88));
  CHECK(grid_from_ecut(3.0, {10, 10, 10}).n == std::array<int, 3>{8, 8, 8});
  CHECK_THROWS_AS(grid_from_ecut(0.0, {1, 1, 1}), InvalidArgument);
  CHECK_THROWS_AS(grid_from_ecut(1.0, {1, -1, 1}), InvalidArgument);
}

TEST_CASE("plane waves are kinetic eigenfunctions, shifted by a constant potential") {
  const auto g = small_grid();
  const auto rs = g.real_space();
  const std::array<int, 3> k{1, -2, 3};
  std::vector<cplx> pw(g.points());
  std::array<double, 3> gv{};
  for (int a = 0; a < 3; ++a) gv[a] = 2 * std::numbers::pi * k[a] / g.length[a];
  for (std::size_t i = 0; i < pw.size(); ++i) {
    const auto r = rs.position(i);
    const double ph = gv[0] * r[0] + gv[1] * r[1] + gv[2] * r[2];
    pw[i] = cplx(std::cos(ph), std::sin(ph)) / std::sqrt(g.volume());
  }
  const double e = 0.5 * (gv[0] * gv[0] + gv[1] * gv[1] + gv[2] * gv[2]);
  for (double c : {0.0, -1.25}) {
    auto hpsi = apply_global(g, std::vector<double>(g.points(), c), {}, pw, 1, 1);
    std::vector<cplx> expect(pw.size());
    for (std::size_t i = 0; i < pw.size(); ++i) expect[i] = (e + c) * pw[i];
    CHECK(max_abs(hpsi, expect) <= 1e-12);
  }
}

TEST_CASE("Hamiltonian matches the dense operator and is linear") {
  auto g = small_grid(8, 8.0);
  const auto entries = two_atom_entries(g);
  auto v = testutil::random_vector(g.points(), 3);
  const std::size_t cols = 5;
  const auto psi = random_cplx(g.points() * cols, 4);
  const auto dense = oracle::dense_hamiltonian(g.n, g.length, v, entries);
  Eigen::Map<const oracle::MatC> x(psi.data(), static_cast<Eigen::Index>(g.points()), static_cast<Eigen::Index>(cols));
  const oracle::MatC hx = dense * x;
  const std::vector<cplx> expect(hx.data(), hx.data() + hx.size());
  for (int p : {1, 3}) CHECK(max_abs(apply_global(g, v, entries, psi, cols, p), expect) <= 1e-10);

  const auto psi2 = random_cplx(g.points() * cols, 5);
  const cplx a(0.3, -1.1), b(2.0, 0.5);
  std::vector<cplx> mix(psi.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * psi[i] + b * psi2[i];
  const auto h1 = apply_global(g, v, entries, psi, cols, 2), h2 = apply_global(g, v, entries, psi2, cols, 2),
             hm = apply_global(g, v, entries, mix, cols, 2);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    err = std::max(err, std::abs(hm[i] - (a * h1[i] + b * h2[i])));
    scale = std::max(scale, std::abs(hm[i]));
  }
  CHECK(err <= 1e-12 * scale);
}

TEST_CASE("subspace projection equals the serial product") {
  const std::size_t rows = 37, na = 6, nb = 4;
  const auto a = random_cplx(rows * na, 10), b = random_cplx(rows * nb, 11);
  const double dv = 0.3;
  std::vector<cplx> expect(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      cplx s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += std::conj(a[i * rows + r]) * b[j * rows + r];
      expect[j * na + i] = s * dv;
    }
  for (int p : {1, 2, 5}) {
    auto got = testutil::per_rank(p, [&](World& w) {
      auto ma = WaveMatrix::from_global(w, layout::Layout::column_block, rows, na, a);
      auto mb = WaveMatrix::from_global(w, layout::Layout::column_block, rows, nb, b);
      auto s = subspace_project(ma, mb, dv, 2);
      auto self = subspace_project(ma, ma, dv, 2);
      double herm = 0.0;
      for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < na; ++j)
          herm = std::max(herm, std::abs(self[j * na + i] - std::conj(self[i * na + j])));
      return std::pair{s, herm};
    });
    for (auto& [s, herm] : got) {
      CHECK(max_abs(s, expect) <= 1e-12);
      CHECK(herm <= 1e-10);
    }
  }
}

TEST_CASE("projected Hamiltonian is Hermitian") {
  auto g = small_grid(6, 6.0);
  const auto entries = two_atom_entries(g);
  const auto v = testutil::random_vector(g.points(), 12);
  const auto psi = random_cplx(g.points() * 4, 13);
  auto herm = testutil::per_rank(2, [&](World& w) {
    Hamiltonian h(w, g, pseudo::make_shard(w.rank(), 2, entries), 1);
    h.set_local_potential(v);
    auto m = WaveMatrix::from_global(w, layout::Layout::column_block, g.points(), 4, psi);
    auto s = subspace_project(m, h.apply(m), g.dv(), 2);
    double e = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) e = std::max(e, std::abs(s[j * 4 + i] - std::conj(s[i * 4 + j])));
    return e;
  });
  CHECK(herm[0] <= 1e-10);
}

TEST_CASE("subspace eigensolve examples") {
  auto got = testutil::per_rank(3, [](World& w) {
    const std::vector<cplx> s{2.0, 1.0, 1.0, 2.0};
    auto two = solve_subspace(w, s, {}, 2, 2, 2);
    const std::vector<cplx> d{3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0};
    auto diag = solve_subspace(w, d, {}, 3, 3, 1);
    return std::pair{two, diag};
  });
  for (auto& [two, diag] : got) {
    CHECK(two.values[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(two.values[1] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(diag.values == std::vector<double>{-1.0, 2.0, 3.0});
    // Permutation: each eigenvector is a unit coordinate vector.
    for (std::size_t j = 0; j < 3; ++j) {
      int ones = 0;
      for (std::size_t i = 0; i < 3; ++i) ones += std::abs(std::abs(diag.vectors[j * 3 + i]) - 1.0) < 1e-14 ? 1 : 0;
      CHECK(ones == 1);
    }
  }
  CHECK(got[0].first.vectors == got[2].first.vectors);
}

TEST_CASE("random Hermitian eigensolve residual") {
  const std::size_t n = 16;
  auto a = random_cplx(n * n, 21);
  std::vector<cplx> s(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s[j * n + i] = a[j * n + i] + std::conj(a[i * n + j]);
  auto got = testutil::per_rank(4, [&](World& w) { return solve_subspace(w, s, {}, n, n, 2); });
  double res = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      cplx su = 0.0;
      for (std::size_t j = 0; j < n; ++j) su += s[j * n + i] * got[1].vectors[k * n + j];
      res = std::max(res, std::abs(su - got[1].values[k] * got[1].vectors[k * n + i]));
    }
  CHECK(res <= 1e-10);
  CHECK(std::is_sorted(got[1].values.begin(), got[1].values.end()));
  std::vector<cplx> bad = s;
  bad[1] += 1.0;
  CHECK_THROWS_AS(run_world({.size = 1}, [&](World& w) { solve_subspace(w, bad, {}, n, n, 1); }), InvalidArgument);
}

TEST_CASE("density of a constant orbital and of random orthonormal sets") {
  auto g = small_grid(5, 4.0);
  std::vector<cplx> c(g.points(), cplx(1.0 / std::sqrt(g.volume()), 0.0));
  auto rho = testutil::per_rank(2, [&](World& w) {
    auto m = WaveMatrix::from_global(w, layout::Layout::column_block, g.points(), 1, c);
    return compute_density(m, 2);
  });
  for (double r : rho[1]) CHECK(r == doctest::Approx(2.0 / g.volume()).epsilon(1e-14));
  CHECK(integrate(rho[1], g.dv()) == doctest::Approx(2.0).epsilon(1e-12));

  auto res = testutil::per_rank(3, [&](World& w) {
    auto psi = random_wavefunctions(w, g, 6, 99, 2);
    auto d = compute_density(psi, 8);
    return std::tuple{integrate(d, g.dv()), *std::min_element(d.begin(), d.end()), orthonormality_error(psi, g.dv(), 2)};
  });
  for (auto [q, lo, orth] : res) {
    CHECK(std::abs(q - 8.0) <= 1e-8);
    CHECK(lo >= 0.0);
    CHECK(orth <= 1e-10);
  }
  CHECK_THROWS_AS(run_world({.size = 1},
                            [&](World& w) { compute_density(random_wavefunctions(w, g, 2, 1, 1), 6); }),
                  InvalidArgument);
}

TEST_CASE("random wavefunctions do not depend on the rank count") {
  auto g = small_grid(4, 4.0);
  auto one = testutil::per_rank(1, [&](World& w) { return layout::gather_global(random_wavefunctions(w, g, 5, 3, 1)); });
  auto four = testutil::per_rank(4, [&](World& w) { return layout::gather_global(random_wavefunctions(w, g, 5, 3, 4)); });
  CHECK(max_abs(one[0], four[2]) <= 1e-12);
}

TEST_CASE("Hartree potential") {
  auto g = small_grid(6, 6.0);
  std::vector<double> flat(g.points(), 0.7);
  for (double v : hartree_potential(g, flat)) CHECK(std::abs(v) <= 1e-12);

  // rho = cos(G0 . r) -> V_H = 4 pi cos(G0 . r) / |G0|^2.
  const auto rs = g.real_space();
  const double g0 = 2 * std::numbers::pi / g.length[1];
  std::vector<double> mode(g.points());
  for (std::size_t i = 0; i < mode.size(); ++i) mode[i] = std::cos(g0 * rs.position(i)[1]);
  auto vh = hartree_potential(g, mode);
  double err = 0.0;
  for (std::size_t i = 0; i < mode.size(); ++i) err = std::max(err, std::abs(vh[i] - 4 * std::numbers::pi * mode[i] / (g0 * g0)));
  CHECK(err <= 1e-10);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto rho = testutil::random_vector(g.points(), seed);
    auto v = hartree_potential(g, rho);
    double e = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) e += rho[i] * v[i];
    CHECK(e >= 0.0);
  }
}

TEST_CASE("inner sweeps lower the Ritz sum") {
  auto g = small_grid(6, 6.0);
  const auto entries = two_atom_entries(g);
  auto v = testutil::random_vector(g.points(), 30);
  for (auto& x : v) x -= 1.0;
  auto sums = testutil::per_rank(2, [&](World& w) {
    Hamiltonian h(w, g, pseudo::make_shard(w.rank(), 2, entries), 2);
    h.set_local_potential(v);
    auto psi = random_wavefunctions(w, g, 4, 5, 2);
    auto s = subspace_project(psi, h.apply(psi), g.dv(), 2);
    auto rr = rayleigh_ritz(s, psi, 1);
    auto res = lobpcg_lite(h, rr.psi, rr.values, 8, 2, 1);
    double start = 0.0;
    for (double x : rr.values) start += x;
    res.sweep_sums.insert(res.sweep_sums.begin(), start);
    return std::pair{res.sweep_sums, orthonormality_error(rr.psi, g.dv(), 2)};
  });
  auto& [seq, orth] = sums[0];
  for (std::size_t k = 1; k < seq.size(); ++k) CHECK(seq[k] <= seq[k - 1] + 1e-10);
  CHECK(orth <= 1e-10);
}

TEST_CASE("config parsing reports the offending line") {
  const std::string good = R"({
  "cell": [10, 10, 10],
  "ecut": 3.0,
  "kinds": [{"z": 1, "symbol": "H", "valence": 1, "well_depth": 8, "well_width": 0.8,
             "projector_sigma": 0.7, "weights": [0.3]}],
  "atoms": [{"kind": 1, "position": [14.3, 5, -5]}, {"kind": 1, "position": [5.7, 5, 5]}],
  "solver": {"n_wf": 4}
})";
  auto cfg = parse_system_config(good);
  CHECK(cfg.electrons == 2);
  CHECK(cfg.grid.n == std::array<int, 3>{8, 8, 8});
  CHECK(cfg.atoms[0].position[0] == doctest::Approx(4.3));
  CHECK(cfg.atoms[0].position[2] == doctest::Approx(5.0));

  const std::string bad_ecut = "{\n  \"cell\": [10, 10, 10],\n  \"ecut\": -1\n}";
  CHECK_THROWS_WITH(parse_system_config(bad_ecut, "sys.json"), doctest::Contains("sys.json:3:"));
  const std::string syntax = "{\n  \"cell\": [10, 10, 10],\n  \"ecut\": ,\n}";
  CHECK_THROWS_WITH(parse_system_config(syntax, "sys.json"), doctest::Contains("sys.json:3:"));
  const std::string unknown = "{\n  \"cell\": [1, 1, 1],\n  \"ecut\": 1,\n  \"atomz\": []\n}";
  CHECK_THROWS_WITH(parse_system_config(unknown, "u.json"), doctest::Contains("u.json:4:"));
}

TEST_CASE("bundled config loads") {
  auto cfg = load_system_config(testutil::source_path("configs/h2_8cube.json"));
  CHECK(cfg.atoms.size() == 2);
  CHECK(cfg.grid.n == std::array<int, 3>{8, 8, 8});
  CHECK(cfg.solver.n_wf == 4);
}
