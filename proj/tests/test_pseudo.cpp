#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles/pseudo_oracle.hpp"
#include "pwmini/parallel.hpp"
#include "pwmini/pseudo.hpp"
#include "test_util.hpp"

using namespace pwmini;
using namespace pwmini::pseudo;
using pwmini::transport::run_world;
using pwmini::transport::World;

namespace {

const RealSpaceGrid kGrid{{6, 5, 4}, {6.0, 5.0, 4.5}};

std::vector<cplx> random_wf(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto re = testutil::random_vector(rows * cols, seed);
  auto im = testutil::random_vector(rows * cols, seed + 1000);
  std::vector<cplx> out(rows * cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {re[i], im[i]};
  return out;
}

double rel_err(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return den > 0.0 ? num / den : num;
}

struct Run {
  std::vector<cplx> out;
  VnlStats stats;
};

Run run_distributed(World& w, const std::vector<PseudoEntry>& all, const std::vector<cplx>& g, std::size_t cols,
                    int window) {
  auto wf = WaveMatrix::from_global(w, layout::Layout::column_block, kGrid.points(), cols, g);
  const auto shard = make_shard(w.rank(), w.size(), all);
  VnlStats st;
  auto out = apply_vnl_distributed(wf, shard, window, kGrid.dv(), &st);
  return {layout::gather_global(out), st};
}

}  // namespace

TEST_CASE("record layout and round trip") {
  auto entries = oracle::random_entries(3, kGrid, 1);
  CHECK(record_bytes(4, 120) == 20 + 16 * 4 * 120 + 8 * 4);
  auto bytes = serialize_entries(entries);
  CHECK(bytes.size() == 3 * record_bytes(4, 120));
  auto back = deserialize_entries(bytes);
  REQUIRE(back.size() == 3);
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK(back[a].atom_id == entries[a].atom_id);
    CHECK(back[a].projectors == entries[a].projectors);
    CHECK(back[a].weights == entries[a].weights);
  }
  bytes.pop_back();
  CHECK_THROWS_AS(deserialize_entries(bytes), Error);
}

TEST_CASE("synthetic projectors are normalized") {
  auto e = oracle::random_entries(1, kGrid, 2, 8)[0];
  for (std::size_t l = 0; l < 8; ++l) {
    double n2 = 0.0;
    for (auto v : e.projector(l)) n2 += std::norm(v);
    CHECK(n2 * kGrid.dv() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("single atom single wavefunction equals the rank-1 expansion") {
  auto e = oracle::random_entries(1, kGrid, 3, 1);
  const auto psi = random_wf(kGrid.points(), 1, 5);
  std::vector<cplx> out(psi.size());
  apply_vnl_block_reference(e, psi, kGrid.points(), 1, kGrid.dv(), out);
  cplx dot = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) dot += std::conj(e[0].projectors[i]) * psi[i];
  double err = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i)
    err = std::max(err, std::abs(out[i] - e[0].weights[0] * e[0].projectors[i] * dot * kGrid.dv()));
  CHECK(err <= 1e-14);
}

TEST_CASE("no atoms gives zero") {
  std::vector<PseudoEntry> none;
  const auto g = random_wf(kGrid.points(), 3, 6);
  auto got = testutil::per_rank(3, [&](World& w) { return run_distributed(w, none, g, 3, 2).out; });
  for (auto& v : got)
    for (auto x : v) CHECK(x == cplx{});
}

TEST_CASE("single rank equals the reference bitwise") {
  auto all = oracle::random_entries(7, kGrid, 9);
  const auto g = random_wf(kGrid.points(), 5, 10);
  auto got = testutil::per_rank(1, [&](World& w) {
    auto wf = WaveMatrix::from_global(w, layout::Layout::column_block, kGrid.points(), 5, g);
    auto ref = apply_vnl_reference(wf, all, kGrid.dv());
    auto dist = apply_vnl_distributed(wf, make_shard(0, 1, all), 1, kGrid.dv());
    return std::memcmp(ref.local().data(), dist.local().data(), ref.local().size_bytes()) == 0;
  });
  CHECK(got[0]);
}

TEST_CASE("distributed apply matches the replicated reference and ignores the window") {
  for (auto [p, atoms, cols] : {std::tuple{4, 10, 8}, {3, 7, 5}, {5, 3, 6}, {2, 1, 2}}) {
    auto all = oracle::random_entries(static_cast<std::size_t>(atoms), kGrid, static_cast<std::uint64_t>(p * 31 + atoms));
    const auto g = random_wf(kGrid.points(), static_cast<std::size_t>(cols), 17);
    std::vector<cplx> ref(g.size());
    apply_vnl_block_reference(all, g, kGrid.points(), static_cast<std::size_t>(cols), kGrid.dv(), ref);
    std::vector<cplx> first;
    for (int window : {1, 2, 3}) {
      auto got = testutil::per_rank(p, [&](World& w) { return run_distributed(w, all, g, static_cast<std::size_t>(cols), window); });
      CHECK(rel_err(got[0].out, ref) <= 1e-12);
      if (first.empty()) first = got[0].out;
      CHECK(std::memcmp(first.data(), got[0].out.data(), first.size() * sizeof(cplx)) == 0);
      for (int r = 0; r < p; ++r) {
        const auto& st = got[static_cast<std::size_t>(r)].stats;
        const auto ceil_share = static_cast<std::size_t>((atoms + p - 1) / p);
        CHECK(st.shard_messages == p - 1);
        CHECK(st.atoms_sent <= static_cast<std::size_t>(p - 1) * ceil_share);
        // Everything except the predecessor's shard leaves this rank once.
        const auto [b, e] = shard_range(static_cast<std::size_t>(atoms), p, (r + p - 1) % p);
        CHECK(st.atoms_sent == static_cast<std::size_t>(atoms) - (e - b));
        CHECK(st.peak_buffered_shards <= window);
      }
    }
  }
}

TEST_CASE("window and shard validation") {
  auto all = oracle::random_entries(4, kGrid, 1);
  CHECK_THROWS_AS(run_world({.size = 2},
                            [&](World& w) {
                              auto wf = WaveMatrix::column_block(w, kGrid.points(), 2);
                              apply_vnl_distributed(wf, make_shard(w.rank(), 2, all), 0, kGrid.dv());
                            }),
                  InvalidArgument);
  CHECK_THROWS_AS(run_world({.size = 2},
                            [&](World& w) {
                              auto wf = WaveMatrix::column_block(w, kGrid.points(), 2);
                              apply_vnl_distributed(wf, make_shard(w.rank(), 3, all), 1, kGrid.dv());
                            }),
                  InvalidArgument);
}

TEST_CASE("the nonlocal energy is real") {
  auto all = oracle::random_entries(5, kGrid, 12);
  const auto psi = random_wf(kGrid.points(), 1, 13);
  std::vector<cplx> out(psi.size());
  apply_vnl_block_reference(all, psi, kGrid.points(), 1, kGrid.dv(), out);
  cplx e = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) e += std::conj(psi[i]) * out[i];
  CHECK(std::abs(e.imag()) <= 1e-10);
}

TEST_CASE("OpenMP kernel matches the serial reference bitwise") {
  auto all = oracle::random_entries(3, kGrid, 14);
  const auto psi = random_wf(kGrid.points(), 9, 15);
  std::vector<cplx> serial(psi.size()), threaded(psi.size());
  apply_vnl_block_reference(all, psi, kGrid.points(), 9, kGrid.dv(), serial);
  set_kernel_threads(4);
  for (const auto& e : all) apply_entry(e, psi, kGrid.points(), 9, kGrid.dv(), threaded);
  set_kernel_threads(1);
  CHECK(std::memcmp(serial.data(), threaded.data(), serial.size() * sizeof(cplx)) == 0);
  CHECK_THROWS_AS(set_kernel_threads(0), InvalidArgument);
}

TEST_CASE("memory report") {
  auto m = pseudo_memory_report(10, 1000, 4);
  CHECK(m.replicated_bytes == 10000);
  CHECK(m.distributed_bytes == 3000);
  auto one = pseudo_memory_report(10, 1000, 1);
  CHECK(one.replicated_bytes == one.distributed_bytes);
  const std::uint64_t entry = 300000;  // 0.3 MB
  const double gb = static_cast<double>(pseudo_memory_report(11520, entry, 64).replicated_bytes) / 1e9;
  CHECK(gb == doctest::Approx(3.456));
  CHECK(pseudo_memory_report(11520, entry, 64).distributed_bytes == 180 * entry);
}

TEST_CASE("distributed dft_data stays within one shard") {
  auto all = oracle::random_entries(9, kGrid, 20);
  const auto g = random_wf(kGrid.points(), 4, 21);
  auto peak = testutil::per_rank(4, [&](World& w) {
    auto wf = WaveMatrix::from_global(w, layout::Layout::column_block, kGrid.points(), 4, g);
    const auto shard = make_shard(w.rank(), 4, all);
    memmon::ScopedRecord rec(&w.ledger(), "shard", memmon::Category::dft_data, static_cast<std::int64_t>(shard.bytes()));
    w.ledger().reset_high_water();
    apply_vnl_distributed(wf, shard, 2, kGrid.dv());
    return std::pair{w.ledger().snapshot().peak(memmon::Category::dft_data), w.ledger().snapshot().peak(memmon::Category::temporary)};
  });
  const auto entry = static_cast<std::int64_t>(all[0].record_bytes());
  for (auto [dft, tmp] : peak) {
    CHECK(dft <= 3 * entry);
    CHECK(tmp <= 2 * 3 * entry);
  }
}

TEST_CASE("kind table agrees with a map and reads one slot per lookup") {
  for (std::size_t cap : {std::size_t{1}, std::size_t{200}}) {
    KindTable t(cap);
    oracle::MapKinds ref;
    for (int z = 0; z < static_cast<int>(cap); z += 3) {
      KindRecord k;
      k.atomic_number = z;
      k.symbol = "K" + std::to_string(z);
      k.valence = z * 0.5;
      t.add(k);
      ref.kinds[z] = k;
    }
    CHECK(t.registered() == ref.kinds.size());
    for (int z = 0; z < static_cast<int>(cap); ++z) {
      const std::size_t before = t.probes();
      const auto& rec = t.lookup(z);
      CHECK(t.probes() - before == 1);
      const auto* m = ref.find(z);
      CHECK(rec.present() == (m != nullptr));
      if (m) {
        CHECK(rec.symbol == m->symbol);
        CHECK(rec.valence == m->valence);
      }
    }
    CHECK_THROWS_AS(t.lookup(static_cast<int>(cap)), InvalidArgument);
    CHECK_THROWS_AS(t.lookup(-1), InvalidArgument);
  }
  KindTable t;
  KindRecord si, c;
  si.atomic_number = 14;
  si.symbol = "Si";
  c.atomic_number = 6;
  c.symbol = "C";
  t.add(si);
  t.add(c);
  CHECK(t.lookup(14).symbol == "Si");
  CHECK(t.lookup(6).symbol == "C");
  CHECK_FALSE(t.lookup(7).present());
}
