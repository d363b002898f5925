#pragma once

// Collectives built from point-to-point messages: linear reduce, allgatherv,
// alltoallv, binomial broadcast, a recursive-doubling allreduce baseline and
// the three-stage (row domain / column domain / row domain) allreduce.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pwmini/transport.hpp"

namespace pwmini::collectives {

using transport::Counters;
using transport::World;

// ---------------------------------------------------------------------------
// Process grid of the multistage allreduce.
//
// P ranks are arranged in R = P / C row domains. The m = P mod C leftover
// ranks are spread over the row domains as extra processes: when m <= R the
// first m row domains hold C + 1 ranks and the rest hold C; when m > R each
// domain takes floor(m / R) extras and the first m mod R take one more.
// Within a row domain, j is the position; ranks with j >= C are extra
// processes. Column domain j < C collects the rank at position j of every
// row domain and therefore always has R members.
// ---------------------------------------------------------------------------

struct GridCoord {
  int i = 0;
  int j = 0;
  bool operator==(const GridCoord&) const = default;
};

// Throws InvalidArgument unless 1 <= C <= P and 0 <= rank < P.
GridCoord grid_coords(int procs, int width, int rank);

class ReduceGrid {
 public:
  ReduceGrid(int procs, int width);

  int procs() const { return procs_; }
  int width() const { return width_; }
  // m: number of extra processes.
  int extra_count() const { return procs_ % width_; }
  // R: number of row domains.
  int row_domains() const { return procs_ / width_; }

  GridCoord coords(int rank) const { return grid_coords(procs_, width_, rank); }
  int rank_of(GridCoord c) const;
  bool is_extra(int rank) const { return coords(rank).j >= width_; }

  int row_domain_size(int i) const;
  std::vector<int> row_domain_members(int i) const;
  std::vector<int> column_domain_members(int j) const;

 private:
  int procs_;
  int width_;
};

// Contiguous element range of block k when n elements are split into
// `parts` blocks; the first n mod parts blocks get one extra element.
struct BlockRange {
  std::size_t begin = 0;
  std::size_t size = 0;
};
BlockRange block_range(std::size_t n, int parts, int k);

struct StageStats {
  Counters traffic;
  double seconds = 0.0;
};

struct MultistageStats {
  std::array<StageStats, 3> stage{};
};

// In-place elementwise sum over all ranks of `world`; every rank (extra
// processes included) ends with the full result.
MultistageStats multistage_allreduce(const World& world, const ReduceGrid& grid, std::span<double> data);

// Recursive doubling; non-power-of-two sizes fold the first 2*(P - P') ranks
// pairwise before and unfold after, where P' is the largest power of two <= P.
void baseline_allreduce(const World& world, std::span<double> data);

// Linear rooted reduce: every non-root sends its vector once, the root adds
// contributions in rank order. Only the root's `data` holds the result.
void reduce(const World& world, int root, std::span<double> data);

// Concatenation of every rank's contribution in rank order. If `counts` is
// given it receives the per-rank element counts.
std::vector<double> allgatherv(const World& world, std::span<const double> mine,
                               std::vector<std::size_t>* counts = nullptr);

// Binomial-tree broadcast of `data` from `root`.
template <typename T>
void bcast(const World& world, int root, std::span<T> data);

// Personalized all-to-all. `send` holds the slices for destinations 0..P-1
// back to back (sizes `send_counts`); the result holds the slices received
// from sources 0..P-1 back to back, sized by `recv_counts`. Every rank pair
// exchanges exactly one message; the self slice is copied locally.
template <typename T>
void alltoallv(const World& world, std::span<const T> send, std::span<const std::size_t> send_counts,
               std::span<T> recv, std::span<const std::size_t> recv_counts);

// Tags reserved for the collectives in this header.
inline constexpr std::uint32_t kTagReduce = 0xFE00;
inline constexpr std::uint32_t kTagAllreduce = 0xFE01;
inline constexpr std::uint32_t kTagAllgather = 0xFE02;
inline constexpr std::uint32_t kTagAlltoall = 0xFE03;
inline constexpr std::uint32_t kTagBcast = 0xFE04;
inline constexpr std::uint32_t kTagStage3 = 0xFE05;

template <typename T>
void bcast(const World& world, int root, std::span<T> data) {
  const int p = world.size();
  if (root < 0 || root >= p) throw InvalidArgument("rank out of range");
  const int vr = (world.rank() - root + p) % p;
  int mask = 1;
  while (mask < p) {
    if (vr & mask) {
      world.recv_into<T>((vr - mask + root) % p, kTagBcast, data);
      break;
    }
    mask <<= 1;
  }
  mask >>= 1;
  while (mask > 0) {
    if (vr + mask < p) world.send<T>((vr + mask + root) % p, kTagBcast, data);
    mask >>= 1;
  }
}

template <typename T>
void alltoallv(const World& world, std::span<const T> send, std::span<const std::size_t> send_counts,
               std::span<T> recv, std::span<const std::size_t> recv_counts) {
  const auto p = static_cast<std::size_t>(world.size());
  if (send_counts.size() != p || recv_counts.size() != p)
    throw InvalidArgument("alltoallv count tables must have one entry per rank");
  std::vector<std::size_t> send_off(p + 1, 0), recv_off(p + 1, 0);
  for (std::size_t q = 0; q < p; ++q) {
    send_off[q + 1] = send_off[q] + send_counts[q];
    recv_off[q + 1] = recv_off[q] + recv_counts[q];
  }
  if (send_off[p] > send.size() || recv_off[p] > recv.size())
    throw InvalidArgument("alltoallv buffer smaller than counts");

  const auto me = static_cast<std::size_t>(world.rank());
  for (std::size_t k = 1; k < p; ++k) {
    const std::size_t q = (me + k) % p;
    world.send<T>(static_cast<int>(q), kTagAlltoall, send.subspan(send_off[q], send_counts[q]));
  }
  if (send_counts[me] != recv_counts[me]) throw InvalidArgument("alltoallv self slice size mismatch");
  std::copy_n(send.begin() + static_cast<std::ptrdiff_t>(send_off[me]), send_counts[me],
              recv.begin() + static_cast<std::ptrdiff_t>(recv_off[me]));
  for (std::size_t k = 1; k < p; ++k) {
    const std::size_t q = (me + p - k) % p;
    world.recv_into<T>(static_cast<int>(q), kTagAlltoall, recv.subspan(recv_off[q], recv_counts[q]));
  }
}

}  // namespace pwmini::collectives
