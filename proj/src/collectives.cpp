#include "pwmini/collectives.hpp"

#include <bit>
#include <chrono>

namespace pwmini::collectives {

namespace {

struct DomainShape {
  int full;       // row domains holding C + q + 1 ranks
  int base_size;  // C + q
};

DomainShape domain_shape(int procs, int width) {
  const int rows = procs / width;
  const int m = procs % width;
  return {m % rows, width + m / rows};
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void add_into(std::span<double> acc, std::span<const double> x) {
  for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += x[k];
}

}  // namespace

GridCoord grid_coords(int procs, int width, int rank) {
  if (procs < 1) throw InvalidArgument("P must be >= 1");
  if (width < 1 || width > procs) throw InvalidArgument("C must satisfy 1 <= C <= P");
  if (rank < 0 || rank >= procs) throw InvalidArgument("rank out of range");
  const DomainShape s = domain_shape(procs, width);
  const int n = s.full * (s.base_size + 1);
  if (rank < n) return {rank / (s.base_size + 1), rank % (s.base_size + 1)};
  return {(rank - n) / s.base_size + s.full, (rank - n) % s.base_size};
}

ReduceGrid::ReduceGrid(int procs, int width) : procs_(procs), width_(width) {
  if (procs < 1) throw InvalidArgument("P must be >= 1");
  if (width < 1 || width > procs) throw InvalidArgument("C must satisfy 1 <= C <= P");
}

int ReduceGrid::row_domain_size(int i) const {
  if (i < 0 || i >= row_domains()) throw InvalidArgument("row domain out of range");
  const DomainShape s = domain_shape(procs_, width_);
  return i < s.full ? s.base_size + 1 : s.base_size;
}

int ReduceGrid::rank_of(GridCoord c) const {
  if (c.j < 0 || c.j >= row_domain_size(c.i)) throw InvalidArgument("column out of range");
  const DomainShape s = domain_shape(procs_, width_);
  if (c.i < s.full) return c.i * (s.base_size + 1) + c.j;
  return s.full * (s.base_size + 1) + (c.i - s.full) * s.base_size + c.j;
}

std::vector<int> ReduceGrid::row_domain_members(int i) const {
  std::vector<int> out;
  const int n = row_domain_size(i);
  for (int j = 0; j < n; ++j) out.push_back(rank_of({i, j}));
  return out;
}

std::vector<int> ReduceGrid::column_domain_members(int j) const {
  if (j < 0 || j >= width_) throw InvalidArgument("column domain out of range");
  std::vector<int> out;
  for (int i = 0; i < row_domains(); ++i) out.push_back(rank_of({i, j}));
  return out;
}

BlockRange block_range(std::size_t n, int parts, int k) {
  if (parts < 1 || k < 0 || k >= parts) throw InvalidArgument("block index out of range");
  const auto p = static_cast<std::size_t>(parts);
  const auto kk = static_cast<std::size_t>(k);
  const std::size_t base = n / p;
  const std::size_t rem = n % p;
  return {kk * base + std::min(kk, rem), base + (kk < rem ? 1 : 0)};
}

void reduce(const World& world, int root, std::span<double> data) {
  const int p = world.size();
  if (root < 0 || root >= p) throw InvalidArgument("rank out of range");
  if (world.rank() != root) {
    world.send<double>(root, kTagReduce, data);
    return;
  }
  std::vector<double> incoming(data.size());
  for (int q = 0; q < p; ++q) {
    if (q == root) continue;
    world.recv_into<double>(q, kTagReduce, incoming);
    add_into(data, incoming);
  }
}

void baseline_allreduce(const World& world, std::span<double> data) {
  const int p = world.size();
  if (p == 1) return;
  const int rank = world.rank();
  const int pof2 = std::bit_floor(static_cast<unsigned>(p));
  const int rem = p - pof2;
  std::vector<double> incoming(data.size());

  // Fold: among the first 2*rem ranks, even ranks hand their data to the odd
  // neighbour and sit out the doubling phase.
  int newrank;
  if (rank < 2 * rem) {
    if (rank % 2 == 0) {
      world.send<double>(rank + 1, kTagAllreduce, data);
      newrank = -1;
    } else {
      world.recv_into<double>(rank - 1, kTagAllreduce, std::span<double>(incoming));
      add_into(data, incoming);
      newrank = rank / 2;
    }
  } else {
    newrank = rank - rem;
  }

  if (newrank >= 0) {
    auto to_rank = [rem](int nr) { return nr < rem ? 2 * nr + 1 : nr + rem; };
    for (int mask = 1; mask < pof2; mask <<= 1) {
      const int partner = to_rank(newrank ^ mask);
      world.send<double>(partner, kTagAllreduce, data);
      world.recv_into<double>(partner, kTagAllreduce, std::span<double>(incoming));
      // a + b == b + a in IEEE arithmetic, so both partners agree bitwise.
      add_into(data, incoming);
    }
  }

  if (rank < 2 * rem) {
    if (rank % 2 == 1) {
      world.send<double>(rank - 1, kTagAllreduce, data);
    } else {
      world.recv_into<double>(rank + 1, kTagAllreduce, data);
    }
  }
}

std::vector<double> allgatherv(const World& world, std::span<const double> mine,
                               std::vector<std::size_t>* counts) {
  const int p = world.size();
  const int me = world.rank();
  for (int k = 1; k < p; ++k) world.send<double>((me + k) % p, kTagAllgather, mine);
  std::vector<std::vector<double>> parts(static_cast<std::size_t>(p));
  parts[static_cast<std::size_t>(me)].assign(mine.begin(), mine.end());
  for (int k = 1; k < p; ++k) {
    const int q = (me - k + p) % p;
    parts[static_cast<std::size_t>(q)] = world.recv<double>(q, kTagAllgather);
  }
  std::vector<double> out;
  if (counts) counts->clear();
  for (auto& part : parts) {
    if (counts) counts->push_back(part.size());
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

MultistageStats multistage_allreduce(const World& world, const ReduceGrid& grid, std::span<double> data) {
  if (grid.procs() != world.size()) throw InvalidArgument("grid size does not match world size");
  MultistageStats stats;
  const int width = grid.width();
  const GridCoord me = grid.coords(world.rank());
  const bool extra = me.j >= width;

  auto row_members = grid.row_domain_members(me.i);
  auto row = world.subgroup(row_members);
  // Position in the row domain equals j by construction of the member list.

  auto mark = [&](int s, double t0, const Counters& c0) {
    stats.stage[static_cast<std::size_t>(s)].seconds = now_seconds() - t0;
    stats.stage[static_cast<std::size_t>(s)].traffic = world.counters() - c0;
  };

  // Stage 1: C rooted reduces inside the row domain; block B_k lands on j = k.
  double t0 = now_seconds();
  Counters c0 = world.counters();
  for (int k = 0; k < width; ++k) {
    BlockRange b = block_range(data.size(), width, k);
    reduce(*row, k, data.subspan(b.begin, b.size));
  }
  mark(0, t0, c0);

  // Stage 2: allreduce of B_j over column domain j. Extra processes idle.
  t0 = now_seconds();
  c0 = world.counters();
  if (!extra) {
    auto col = world.subgroup(grid.column_domain_members(me.j));
    BlockRange b = block_range(data.size(), width, me.j);
    baseline_allreduce(*col, data.subspan(b.begin, b.size));
  }
  mark(1, t0, c0);

  // Stage 3: every holder of a reduced block ships it to the rest of its row
  // domain, extra processes included.
  t0 = now_seconds();
  c0 = world.counters();
  const int row_size = row->size();
  if (!extra) {
    BlockRange b = block_range(data.size(), width, me.j);
    auto mine = data.subspan(b.begin, b.size);
    for (int q = 0; q < row_size; ++q) {
      if (q != me.j) row->send<double>(q, kTagStage3, mine);
    }
  }
  for (int k = 0; k < width; ++k) {
    if (k == me.j) continue;
    BlockRange b = block_range(data.size(), width, k);
    row->recv_into<double>(k, kTagStage3, data.subspan(b.begin, b.size));
  }
  mark(2, t0, c0);
  return stats;
}

}  // namespace pwmini::collectives
