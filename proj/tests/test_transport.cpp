#include <atomic>
#include <map>

#include "doctest.h"
#include "pwmini/transport.hpp"
#include "test_util.hpp"

using namespace pwmini;
using namespace pwmini::transport;

TEST_CASE("echo between two ranks") {
  auto got = testutil::per_rank(2, [](World& w) {
    if (w.rank() == 0) {
      const std::vector<double> v{1.0, 2.0};
      w.send<double>(1, 7, v);
      return std::vector<double>{};
    }
    return w.recv<double>(0, 7);
  });
  CHECK(got[1] == std::vector<double>{1.0, 2.0});
}

TEST_CASE("same pair and tag arrive in send order") {
  auto got = testutil::per_rank(2, [](World& w) {
    std::vector<std::int64_t> seen;
    if (w.rank() == 0) {
      const std::vector<std::int64_t> a{1}, b{2};
      w.send<std::int64_t>(1, 3, a);
      w.send<std::int64_t>(1, 3, b);
    } else {
      seen.push_back(w.recv<std::int64_t>(0, 3)[0]);
      seen.push_back(w.recv<std::int64_t>(0, 3)[0]);
    }
    return seen;
  });
  CHECK(got[1] == std::vector<std::int64_t>{1, 2});
}

TEST_CASE("send out of range is rejected") {
  CHECK_THROWS_WITH_AS(run_world({.size = 2}, [](World& w) {
                         const std::vector<double> v{1.0};
                         if (w.rank() == 0) w.send<double>(2, 1, v);
                       }),
                       "rank out of range", InvalidArgument);
}

TEST_CASE("FIFO per (src, tag) under randomized interleaving") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    WorldOptions opts;
    opts.jitter = true;
    opts.schedule_seed = seed;
    auto ok = testutil::per_rank(
        5,
        [](World& w) {
          const int p = w.size();
          for (std::int64_t k = 0; k < 40; ++k)
            for (int d = 0; d < p; ++d)
              if (d != w.rank()) {
                const std::vector<std::int64_t> v{k, w.rank()};
                w.send<std::int64_t>(d, static_cast<std::uint32_t>(k % 3), v);
              }
          // Drain in an order unrelated to the send order.
          bool good = true;
          for (std::uint32_t tag = 3; tag-- > 0;)
            for (int s = p - 1; s >= 0; --s) {
              if (s == w.rank()) continue;
              std::int64_t last = -1;
              for (int k = 0; k < 40; ++k) {
                if (static_cast<std::uint32_t>(k % 3) != tag) continue;
                auto v = w.recv<std::int64_t>(s, tag);
                good = good && v[1] == s && v[0] > last;
                last = v[0];
              }
            }
          return good;
        },
        opts);
    for (bool b : ok) CHECK(b);
  }
}

TEST_CASE("barrier holds every rank until all arrive") {
  std::atomic<int> entered{0};
  auto seen = testutil::per_rank(8, [&](World& w) {
    entered.fetch_add(1);
    w.barrier();
    return entered.load();
  });
  for (int v : seen) CHECK(v == 8);
}

TEST_CASE("blocked receiver is released when a peer fails") {
  CHECK_THROWS_WITH_AS(run_world({.size = 3}, [](World& w) {
                         if (w.rank() == 1) throw InvalidArgument("boom");
                         w.recv<double>((w.rank() + 1) % 3, 9);
                       }),
                       "boom", InvalidArgument);
}

TEST_CASE("subgroup renumbers members and isolates traffic") {
  auto got = testutil::per_rank(4, [](World& w) {
    const std::vector<int> members{2, 0};
    auto g = w.subgroup(members);
    std::vector<double> result;
    if (w.rank() == 1 || w.rank() == 3) {
      CHECK_FALSE(g.has_value());
      return result;
    }
    REQUIRE(g.has_value());
    CHECK(g->size() == 2);
    CHECK(g->rank() == (w.rank() == 2 ? 0 : 1));
    // Same tag on the parent and the subgroup must not cross.
    const std::vector<double> parent{-1.0}, child{static_cast<double>(g->rank())};
    if (g->rank() == 0) {
      w.send<double>(0, 5, parent);
      g->send<double>(1, 5, child);
    } else {
      result = g->recv<double>(0, 5);
      auto p = w.recv<double>(2, 5);
      result.push_back(p[0]);
    }
    return result;
  });
  CHECK(got[0] == std::vector<double>{0.0, -1.0});
}

TEST_CASE("duplicate subgroup members are rejected") {
  CHECK_THROWS_AS(run_world({.size = 2},
                            [](World& w) {
                              const std::vector<int> m{1, 1};
                              (void)w.subgroup(m);
                            }),
                  InvalidArgument);
}

TEST_CASE("frame encoding round trip") {
  Message m;
  m.tag = 0x1234;
  m.type = ElemType::c128;
  m.payload.resize(32);
  for (std::size_t i = 0; i < m.payload.size(); ++i) m.payload[i] = static_cast<std::byte>(i);
  auto frame = encode_frame(m);
  REQUIRE(frame.size() == kFrameHeaderBytes + 32);
  CHECK(std::to_integer<int>(frame[0]) == 0x34);
  CHECK(std::to_integer<int>(frame[1]) == 0x12);
  CHECK(std::to_integer<int>(frame[4]) == 2);
  CHECK(std::to_integer<int>(frame[8]) == 32);
  auto back = decode_frame(frame);
  CHECK(back.tag == m.tag);
  CHECK(back.type == m.type);
  CHECK(back.payload == m.payload);
  frame[8] = std::byte{31};
  CHECK_THROWS_AS(decode_frame_header(std::span(frame).first(kFrameHeaderBytes)), Error);
}

TEST_CASE("counters track messages and bytes") {
  auto c = testutil::per_rank(2, [](World& w) {
    const std::vector<double> v(10, 1.0);
    const Counters c0 = w.counters();
    if (w.rank() == 0) {
      w.send<double>(1, 1, v);
      w.send<double>(1, 1, v);
    } else {
      w.recv<double>(0, 1);
      w.recv<double>(0, 1);
    }
    return w.counters() - c0;
  });
  CHECK(c[0].msgs_sent == 2);
  CHECK(c[0].bytes_sent == 160);
  CHECK(c[1].msgs_recv == 2);
  CHECK(c[1].bytes_recv == 160);
}

TEST_CASE("nonblocking receive completes") {
  auto got = testutil::per_rank(2, [](World& w) {
    if (w.rank() == 1) {
      const std::vector<double> v{4.0};
      w.isend<double>(0, 2, v).wait();
      return 0.0;
    }
    auto req = w.irecv(1, 2);
    return req.wait_as<double>()[0];
  });
  CHECK(got[0] == 4.0);
}

TEST_CASE("socket backend carries messages") {
  if (!socket_backend_available()) return;
  WorldOptions opts;
  opts.backend = Backend::socket;
  auto got = testutil::per_rank(
      3,
      [](World& w) {
        const int p = w.size();
        std::vector<double> mine{static_cast<double>(w.rank()), 0.5};
        for (int k = 1; k < p; ++k) w.send<double>((w.rank() + k) % p, 11, mine);
        double s = mine[0];
        for (int k = 1; k < p; ++k) s += w.recv<double>((w.rank() + p - k) % p, 11)[0];
        w.barrier();
        return s;
      },
      opts);
  for (double s : got) CHECK(s == 3.0);
}

TEST_CASE("backend names parse") {
  CHECK(parse_backend("inproc") == Backend::inproc);
  CHECK(parse_backend("socket") == Backend::socket);
  CHECK_THROWS_AS(parse_backend("mpi"), InvalidArgument);
}
