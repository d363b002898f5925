#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles/allreduce_oracle.hpp"
#include "pwmini/collectives.hpp"
#include "test_util.hpp"

using namespace pwmini;
using namespace pwmini::collectives;
using pwmini::transport::run_world;

namespace {

std::vector<double> serial_sum(int procs, std::size_t n, std::uint64_t seed) {
  std::vector<double> s(n, 0.0);
  for (int r = 0; r < procs; ++r) {
    auto v = testutil::random_vector(n, seed + static_cast<std::uint64_t>(r));
    for (std::size_t i = 0; i < n; ++i) s[i] += v[i];
  }
  return s;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return e;
}

}  // namespace

TEST_CASE("grid coordinate examples") {
  CHECK(grid_coords(10, 4, 7) == GridCoord{1, 2});
  CHECK(grid_coords(8, 4, 5) == GridCoord{1, 1});
  ReduceGrid g(9, 4);
  CHECK(g.row_domain_size(0) == 5);
  CHECK(g.row_domain_size(1) == 4);
  int extras = 0;
  for (int r = 0; r < 9; ++r) extras += g.is_extra(r) ? 1 : 0;
  CHECK(extras == 1);
  CHECK(g.is_extra(4));
  CHECK_THROWS_AS(ReduceGrid(6, 8), InvalidArgument);
  CHECK_THROWS_AS(grid_coords(6, 0, 0), InvalidArgument);
}

TEST_CASE("grid coordinates biject and match the closed form when m <= R") {
  for (int p = 1; p <= 40; ++p)
    for (int c = 1; c <= p; ++c) {
      ReduceGrid g(p, c);
      const int m = p % c, rr = p / c;
      std::set<std::pair<int, int>> seen;
      for (int r = 0; r < p; ++r) {
        auto xy = g.coords(r);
        CHECK(seen.insert({xy.i, xy.j}).second);
        CHECK(g.rank_of(xy) == r);
        if (m <= rr) {
          const int n = m * (c + 1);
          const GridCoord expect = r < n ? GridCoord{r / (c + 1), r % (c + 1)} : GridCoord{(r - n) / c + m, (r - n) % c};
          CHECK(xy == expect);
        }
      }
      for (int j = 0; j < c; ++j) CHECK(static_cast<int>(g.column_domain_members(j).size()) == rr);
    }
}

TEST_CASE("block ranges partition the vector") {
  for (std::size_t n : {0u, 1u, 7u, 64u, 1000u})
    for (int parts = 1; parts <= 9; ++parts) {
      std::size_t next = 0;
      for (int k = 0; k < parts; ++k) {
        auto b = block_range(n, parts, k);
        CHECK(b.begin == next);
        CHECK(b.size == n / parts + (static_cast<std::size_t>(k) < n % parts ? 1 : 0));
        next += b.size;
      }
      CHECK(next == n);
    }
}

TEST_CASE("constant input sums to P") {
  auto got = testutil::per_rank(8, [](World& w) {
    std::vector<double> a(12, 1.0), b(12, 1.0);
    multistage_allreduce(w, ReduceGrid(8, 4), a);
    baseline_allreduce(w, b);
    return std::pair{a, b};
  });
  for (auto& [a, b] : got) {
    CHECK(a == std::vector<double>(12, 8.0));
    CHECK(b == std::vector<double>(12, 8.0));
  }
}

TEST_CASE("multistage and baseline agree with the serial sum") {
  for (int p : {2, 3, 5, 7, 10, 13})
    for (int c = 1; c <= std::min(8, p); c += 2)
      for (std::size_t n : {1u, 7u, 1000u}) {
        const auto expect = serial_sum(p, n, 100);
        auto got = testutil::per_rank(p, [&](World& w) {
          auto a = testutil::random_vector(n, 100 + static_cast<std::uint64_t>(w.rank()));
          auto b = a;
          multistage_allreduce(w, ReduceGrid(p, c), a);
          baseline_allreduce(w, b);
          return std::pair{a, b};
        });
        for (auto& [a, b] : got) {
          CHECK(max_rel_err(a, expect) <= 1e-12);
          CHECK(max_rel_err(b, expect) <= 1e-12);
        }
        // Every rank must end with the same bits.
        for (auto& [a, b] : got) {
          CHECK(a == got[0].first);
          CHECK(b == got[0].second);
        }
      }
}

TEST_CASE("stage message counts match the closed form") {
  for (int p = 2; p <= 16; ++p)
    for (int c = 1; c <= std::min(8, p); ++c) {
      auto stats = testutil::per_rank(p, [&](World& w) {
        std::vector<double> v(33, 1.0);
        return multistage_allreduce(w, ReduceGrid(p, c), v);
      });
      for (int r = 0; r < p; ++r) {
        const auto expect = oracle::multistage_counts(p, c, r);
        for (int s = 0; s < 3; ++s) {
          CHECK(stats[static_cast<std::size_t>(r)].stage[static_cast<std::size_t>(s)].traffic.msgs_sent ==
                expect[static_cast<std::size_t>(s)][0]);
          CHECK(stats[static_cast<std::size_t>(r)].stage[static_cast<std::size_t>(s)].traffic.msgs_recv ==
                expect[static_cast<std::size_t>(s)][1]);
        }
      }
    }
}

TEST_CASE("width 1 equals the baseline bitwise") {
  auto got = testutil::per_rank(6, [](World& w) {
    auto a = testutil::random_vector(50, 7 + static_cast<std::uint64_t>(w.rank()));
    auto b = a;
    multistage_allreduce(w, ReduceGrid(6, 1), a);
    baseline_allreduce(w, b);
    return a == b;
  });
  for (bool b : got) CHECK(b);
}

TEST_CASE("reduce, allgatherv, bcast and alltoallv") {
  auto got = testutil::per_rank(5, [](World& w) {
    const int p = w.size(), me = w.rank();
    std::vector<double> red(3, static_cast<double>(me));
    reduce(w, 2, red);
    std::vector<double> mine(static_cast<std::size_t>(me), static_cast<double>(me));
    std::vector<std::size_t> counts;
    auto all = allgatherv(w, mine, &counts);
    std::vector<std::int64_t> b(4, me == 3 ? 42 : 0);
    bcast<std::int64_t>(w, 3, b);
    // Slice for destination d holds d+1 copies of 10*me + d.
    std::vector<double> send;
    std::vector<std::size_t> sc, rc;
    for (int d = 0; d < p; ++d) {
      sc.push_back(static_cast<std::size_t>(d + 1));
      for (int k = 0; k <= d; ++k) send.push_back(10.0 * me + d);
      rc.push_back(static_cast<std::size_t>(me + 1));
    }
    std::vector<double> recv(static_cast<std::size_t>(p * (me + 1)));
    alltoallv<double>(w, send, sc, recv, rc);
    bool ok = true;
    if (me == 2) ok = ok && red == std::vector<double>(3, 10.0);
    std::vector<double> expect_all;
    for (int q = 0; q < p; ++q)
      for (int k = 0; k < q; ++k) expect_all.push_back(q);
    ok = ok && all == expect_all && counts.size() == 5 && counts[4] == 4;
    ok = ok && b == std::vector<std::int64_t>(4, 42);
    for (int q = 0; q < p; ++q)
      for (int k = 0; k <= me; ++k) ok = ok && recv[static_cast<std::size_t>(q * (me + 1) + k)] == 10.0 * q + me;
    return ok;
  });
  for (bool b : got) CHECK(b);
}

TEST_CASE("singleton world collectives are identities") {
  run_world({.size = 1}, [](World& w) {
    std::vector<double> v{1.5, 2.5};
    multistage_allreduce(w, ReduceGrid(1, 1), v);
    baseline_allreduce(w, v);
    reduce(w, 0, v);
    CHECK(v == std::vector<double>{1.5, 2.5});
    CHECK(allgatherv(w, v) == v);
  });
}

TEST_CASE("length mismatch surfaces as an error") {
  CHECK_THROWS_AS(run_world({.size = 4},
                            [](World& w) {
                              std::vector<double> v(w.rank() == 1 ? 5 : 6, 1.0);
                              baseline_allreduce(w, v);
                            }),
                  Error);
}
