#include "pwmini/layout.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <string>

#include "pwmini/collectives.hpp"

namespace pwmini::layout {

std::size_t part_size(std::size_t n, int parts, int k) {
  return collectives::block_range(n, parts, k).size;
}

std::size_t part_start(std::size_t n, int parts, int k) {
  return collectives::block_range(n, parts, k).begin;
}

std::vector<std::size_t> balanced_counts(std::size_t n, int parts) {
  std::vector<std::size_t> out(static_cast<std::size_t>(parts));
  for (int k = 0; k < parts; ++k) out[static_cast<std::size_t>(k)] = part_size(n, parts, k);
  return out;
}

SubBlockPlan SubBlockPlan::make(std::size_t rows, std::size_t cols_local, int procs) {
  if (procs < 1) throw InvalidArgument("P must be >= 1");
  SubBlockPlan p;
  p.procs = procs;
  p.rows = rows;
  p.cols_local = cols_local;
  p.block_size = rows / static_cast<std::size_t>(procs);
  p.remainder = rows % static_cast<std::size_t>(procs);
  return p;
}

std::size_t SubBlockPlan::rows_of(int dest) const {
  return block_size + (static_cast<std::size_t>(dest) < remainder ? 1 : 0);
}

std::size_t SubBlockPlan::row_start(int dest) const {
  const auto d = static_cast<std::size_t>(dest);
  return d * block_size + std::min(d, remainder);
}

SubBlock map_index(const SubBlockPlan& plan, std::size_t col, int dest) {
  if (col >= plan.cols_local) throw InvalidArgument("column out of range");
  if (dest < 0 || dest >= plan.procs) throw InvalidArgument("rank out of range");
  return {col * plan.rows + plan.row_start(dest), plan.rows_of(dest)};
}

PackTable pack_table(const SubBlockPlan& plan) {
  PackTable t;
  t.offset.resize(static_cast<std::size_t>(plan.procs));
  t.count.resize(static_cast<std::size_t>(plan.procs));
  for (int d = 0; d < plan.procs; ++d) {
    t.offset[static_cast<std::size_t>(d)] = plan.packed_offset(d);
    t.count[static_cast<std::size_t>(d)] = plan.rows_of(d) * plan.cols_local;
  }
  return t;
}

std::uint64_t buffer_cost_model(std::uint64_t rows, std::uint64_t cols) { return 24 * rows * cols; }

namespace {

// Blocks of `bsz` elements arranged as a `nrows` x `ncols` row-major grid are
// transposed in place (block (i, j) moves from i*ncols + j to j*nrows + i)
// by following permutation cycles with a single block of scratch. A cycle is
// moved only from its smallest index, so no visited set is needed.
template <typename T>
void transpose_blocks(T* data, std::size_t nrows, std::size_t ncols, std::size_t bsz, T* scratch) {
  const std::size_t n = nrows * ncols;
  if (nrows <= 1 || ncols <= 1 || bsz == 0) return;
  const std::size_t mod = n - 1;
  auto dest = [&](std::size_t k) { return (k * nrows) % mod; };
  auto source = [&](std::size_t k) { return (k * ncols) % mod; };

  for (std::size_t start = 1; start < mod; ++start) {
    std::size_t k = dest(start);
    while (k > start) k = dest(k);
    if (k < start) continue;  // cycle already moved from its leader
    std::copy_n(data + start * bsz, bsz, scratch);
    std::size_t cur = start;
    for (;;) {
      std::size_t src = source(cur);
      if (src == start) {
        std::copy_n(scratch, bsz, data + cur * bsz);
        break;
      }
      std::copy_n(data + src * bsz, bsz, data + cur * bsz);
      cur = src;
    }
  }
}

// [A0 B0 A1 B1 ...] -> [A0 A1 ... B0 B1 ...] for n column pairs with |A| = a,
// |B| = b, using rotations only.
template <typename T>
void split_regions(T* data, std::size_t n, std::size_t a, std::size_t b) {
  if (n <= 1) return;
  const std::size_t h = n / 2;
  split_regions(data, h, a, b);
  split_regions(data + h * (a + b), n - h, a, b);
  std::rotate(data + h * a, data + h * (a + b), data + h * (a + b) + (n - h) * a);
}

// Inverse of split_regions.
template <typename T>
void merge_regions(T* data, std::size_t n, std::size_t a, std::size_t b) {
  if (n <= 1) return;
  const std::size_t h = n / 2;
  std::rotate(data + h * a, data + n * a, data + n * a + h * b);
  merge_regions(data, h, a, b);
  merge_regions(data + h * (a + b), n - h, a, b);
}

// Packed position of element (row, col) of the unpacked block.
std::size_t packed_index(const SubBlockPlan& plan, std::size_t row, std::size_t col) {
  const std::size_t big = plan.block_size + 1;
  const std::size_t bnd = plan.boundary();
  int d;
  if (row < bnd) {
    d = static_cast<int>(row / big);
  } else {
    d = static_cast<int>(plan.remainder + (row - bnd) / plan.block_size);
  }
  return plan.packed_offset(d) + col * plan.rows_of(d) + (row - plan.row_start(d));
}

std::int64_t index_words(const SubBlockPlan& plan) {
  // PackTable plus the rotation recursion stack.
  std::int64_t depth = 1;
  for (std::size_t c = plan.cols_local; c > 1; c /= 2) ++depth;
  return 2 * plan.procs + 4 * depth;
}

}  // namespace

template <typename T>
PackTable pack_in_place(std::span<T> local, const SubBlockPlan& plan, memmon::MemoryLedger* ledger) {
  if (local.size() != plan.rows * plan.cols_local) throw InvalidArgument("local block size does not match plan");
  PackTable table = pack_table(plan);
  if (local.empty() || plan.procs == 1) return table;

  const std::size_t big = plan.block_size + 1;
  const std::size_t a = plan.boundary();
  const std::size_t b = plan.rows - a;
  const std::size_t c = plan.cols_local;
  const std::size_t scratch_len = plan.remainder > 0 ? big : plan.block_size;

  memmon::ScopedRecord idx(ledger, "layout.pack.index", memmon::Category::temporary,
                           index_words(plan) * 8);
  memmon::ScopedRecord scr(ledger, "layout.pack.scratch", memmon::Category::temporary,
                           static_cast<std::int64_t>(scratch_len * sizeof(T)));
  std::vector<T> scratch(scratch_len);

  // Separate the (block_size+1)-row region from the block_size-row region,
  // then gather each region's sub-blocks by destination.
  if (a > 0 && b > 0) split_regions(local.data(), c, a, b);
  if (a > 0) transpose_blocks(local.data(), c, plan.remainder, big, scratch.data());
  if (b > 0) {
    transpose_blocks(local.data() + a * c, c, static_cast<std::size_t>(plan.procs) - plan.remainder,
                     plan.block_size, scratch.data());
  }
  return table;
}

template <typename T>
void unpack_in_place(std::span<T> packed, const SubBlockPlan& plan, memmon::MemoryLedger* ledger) {
  if (packed.size() != plan.rows * plan.cols_local) throw InvalidArgument("local block size does not match plan");
  if (packed.empty() || plan.procs == 1) return;

  const std::size_t big = plan.block_size + 1;
  const std::size_t a = plan.boundary();
  const std::size_t b = plan.rows - a;
  const std::size_t c = plan.cols_local;
  const std::size_t scratch_len = plan.remainder > 0 ? big : plan.block_size;

  memmon::ScopedRecord idx(ledger, "layout.unpack.index", memmon::Category::temporary,
                           index_words(plan) * 8);
  memmon::ScopedRecord scr(ledger, "layout.unpack.scratch", memmon::Category::temporary,
                           static_cast<std::int64_t>(scratch_len * sizeof(T)));
  std::vector<T> scratch(scratch_len);

  if (a > 0) transpose_blocks(packed.data(), plan.remainder, c, big, scratch.data());
  if (b > 0) {
    transpose_blocks(packed.data() + a * c, static_cast<std::size_t>(plan.procs) - plan.remainder, c,
                     plan.block_size, scratch.data());
  }
  if (a > 0 && b > 0) merge_regions(packed.data(), c, a, b);
}

template <typename T>
void pack_reference(std::span<T> local, const SubBlockPlan& plan, memmon::MemoryLedger* ledger) {
  if (local.size() != plan.rows * plan.cols_local) throw InvalidArgument("local block size does not match plan");
  const std::size_t n = local.size();
  memmon::ScopedRecord map_rec(ledger, "layout.ref.map", memmon::Category::temporary,
                               static_cast<std::int64_t>(n * sizeof(std::int32_t)));
  memmon::ScopedRecord buf_rec(ledger, "layout.ref.buffer", memmon::Category::temporary,
                               static_cast<std::int64_t>(n * sizeof(T)));
  std::vector<std::int32_t> map(n);
  for (std::size_t j = 0; j < plan.cols_local; ++j)
    for (std::size_t i = 0; i < plan.rows; ++i)
      map[j * plan.rows + i] = static_cast<std::int32_t>(packed_index(plan, i, j));
  std::vector<T> buffer(n);
  for (std::size_t k = 0; k < n; ++k) buffer[static_cast<std::size_t>(map[k])] = local[k];
  std::copy(buffer.begin(), buffer.end(), local.begin());
}

template <typename T>
void unpack_reference(std::span<T> packed, const SubBlockPlan& plan, memmon::MemoryLedger* ledger) {
  if (packed.size() != plan.rows * plan.cols_local) throw InvalidArgument("local block size does not match plan");
  const std::size_t n = packed.size();
  memmon::ScopedRecord map_rec(ledger, "layout.ref.map", memmon::Category::temporary,
                               static_cast<std::int64_t>(n * sizeof(std::int32_t)));
  memmon::ScopedRecord buf_rec(ledger, "layout.ref.buffer", memmon::Category::temporary,
                               static_cast<std::int64_t>(n * sizeof(T)));
  std::vector<std::int32_t> map(n);
  for (std::size_t j = 0; j < plan.cols_local; ++j)
    for (std::size_t i = 0; i < plan.rows; ++i)
      map[j * plan.rows + i] = static_cast<std::int32_t>(packed_index(plan, i, j));
  std::vector<T> buffer(n);
  for (std::size_t k = 0; k < n; ++k) buffer[k] = packed[static_cast<std::size_t>(map[k])];
  std::copy(buffer.begin(), buffer.end(), packed.begin());
}

// ---------------------------------------------------------------------------
// DistMatrix
// ---------------------------------------------------------------------------

template <typename T>
DistMatrix<T>::DistMatrix(World world, Layout layout, std::size_t rows, std::vector<std::size_t> col_counts)
    : world_(std::move(world)), layout_(layout), rows_(rows), col_counts_(std::move(col_counts)) {
  if (col_counts_.size() != static_cast<std::size_t>(world_.size()))
    throw InvalidArgument("column count list must have one entry per rank");
  cols_ = std::accumulate(col_counts_.begin(), col_counts_.end(), std::size_t{0});
}

template <typename T>
DistMatrix<T> DistMatrix<T>::column_block(World world, std::size_t rows, std::size_t cols) {
  auto counts = balanced_counts(cols, world.size());
  return column_block(std::move(world), rows, std::move(counts));
}

template <typename T>
DistMatrix<T> DistMatrix<T>::column_block(World world, std::size_t rows, std::vector<std::size_t> col_counts) {
  DistMatrix m(std::move(world), Layout::column_block, rows, std::move(col_counts));
  m.local_.assign(m.local_rows() * m.local_cols(), T{});
  return m;
}

template <typename T>
DistMatrix<T> DistMatrix<T>::row_block(World world, std::size_t rows, std::size_t cols) {
  auto counts = balanced_counts(cols, world.size());
  return row_block(std::move(world), rows, std::move(counts));
}

template <typename T>
DistMatrix<T> DistMatrix<T>::row_block(World world, std::size_t rows, std::vector<std::size_t> col_counts) {
  DistMatrix m(std::move(world), Layout::row_block, rows, std::move(col_counts));
  m.local_.assign(m.local_rows() * m.local_cols(), T{});
  return m;
}

template <typename T>
DistMatrix<T> DistMatrix<T>::adopt(World world, Layout layout, std::size_t rows,
                                   std::vector<std::size_t> col_counts, std::vector<T> local) {
  DistMatrix m(std::move(world), layout, rows, std::move(col_counts));
  if (local.size() != m.local_rows() * m.local_cols()) throw InvalidArgument("local storage size mismatch");
  m.local_ = std::move(local);
  return m;
}

template <typename T>
DistMatrix<T> DistMatrix<T>::from_global(World world, Layout layout, std::size_t rows, std::size_t cols,
                                         std::span<const T> global) {
  if (global.size() != rows * cols) throw InvalidArgument("global matrix size mismatch");
  DistMatrix m = layout == Layout::column_block ? column_block(std::move(world), rows, cols)
                                                : row_block(std::move(world), rows, cols);
  const std::size_t lr = m.local_rows(), lc = m.local_cols();
  const std::size_t r0 = m.first_row(), c0 = m.first_col();
  for (std::size_t j = 0; j < lc; ++j)
    for (std::size_t i = 0; i < lr; ++i) m(i, j) = global[(c0 + j) * rows + r0 + i];
  return m;
}

template <typename T>
std::size_t DistMatrix<T>::local_rows() const {
  return layout_ == Layout::column_block ? rows_ : part_size(rows_, world_.size(), world_.rank());
}

template <typename T>
std::size_t DistMatrix<T>::local_cols() const {
  return layout_ == Layout::column_block ? col_counts_[static_cast<std::size_t>(world_.rank())] : cols_;
}

template <typename T>
std::size_t DistMatrix<T>::first_col() const {
  if (layout_ == Layout::row_block) return 0;
  return std::accumulate(col_counts_.begin(), col_counts_.begin() + world_.rank(), std::size_t{0});
}

template <typename T>
std::size_t DistMatrix<T>::first_row() const {
  return layout_ == Layout::column_block ? 0 : part_start(rows_, world_.size(), world_.rank());
}

template <typename T>
DistMatrix<T> col_to_row(DistMatrix<T> m) {
  if (m.layout() != Layout::column_block) throw InvalidArgument("col_to_row expects a column-block matrix");
  const World world = m.world();
  const int p = world.size();
  const std::size_t rows = m.rows();
  const auto counts = m.col_counts();
  const std::size_t my_rows = part_size(rows, p, world.rank());

  const SubBlockPlan plan = SubBlockPlan::make(rows, m.local_cols(), p);
  std::vector<T> local = m.release();
  PackTable table = pack_in_place(std::span<T>(local), plan, &world.ledger());

  std::vector<std::size_t> recv_counts(static_cast<std::size_t>(p));
  for (int q = 0; q < p; ++q) recv_counts[static_cast<std::size_t>(q)] = my_rows * counts[static_cast<std::size_t>(q)];
  std::vector<T> received(my_rows * std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  // Blocks from consecutive senders cover consecutive global columns, so the
  // concatenation is already this rank's rows in global column order.
  collectives::alltoallv<T>(world, local, table.count, received, recv_counts);
  local.clear();
  local.shrink_to_fit();
  return DistMatrix<T>::adopt(world, Layout::row_block, rows, counts, std::move(received));
}

template <typename T>
DistMatrix<T> row_to_col(DistMatrix<T> m) {
  if (m.layout() != Layout::row_block) throw InvalidArgument("row_to_col expects a row-block matrix");
  const World world = m.world();
  const int p = world.size();
  const std::size_t rows = m.rows();
  const auto counts = m.col_counts();
  const std::size_t my_rows = m.local_rows();
  const std::size_t my_cols = counts[static_cast<std::size_t>(world.rank())];

  std::vector<std::size_t> send_counts(static_cast<std::size_t>(p)), recv_counts(static_cast<std::size_t>(p));
  for (int q = 0; q < p; ++q) {
    send_counts[static_cast<std::size_t>(q)] = my_rows * counts[static_cast<std::size_t>(q)];
    recv_counts[static_cast<std::size_t>(q)] = part_size(rows, p, q) * my_cols;
  }
  std::vector<T> local = m.release();
  std::vector<T> received(rows * my_cols);
  collectives::alltoallv<T>(world, local, send_counts, received, recv_counts);
  local.clear();
  local.shrink_to_fit();
  // Received runs arrive in packed order; undo the packing in place.
  unpack_in_place(std::span<T>(received), SubBlockPlan::make(rows, my_cols, p), &world.ledger());
  return DistMatrix<T>::adopt(world, Layout::column_block, rows, counts, std::move(received));
}

template <typename T>
DistMatrix<T> col_to_row_reference(DistMatrix<T> m) {
  if (m.layout() != Layout::column_block) throw InvalidArgument("col_to_row expects a column-block matrix");
  const World world = m.world();
  const int p = world.size();
  const std::size_t rows = m.rows();
  const auto counts = m.col_counts();
  const std::size_t my_rows = part_size(rows, p, world.rank());
  const std::size_t total_cols = m.cols();

  const SubBlockPlan plan = SubBlockPlan::make(rows, m.local_cols(), p);
  std::vector<T> local = m.release();
  pack_reference(std::span<T>(local), plan, &world.ledger());
  PackTable table = pack_table(plan);

  std::vector<std::size_t> recv_counts(static_cast<std::size_t>(p));
  for (int q = 0; q < p; ++q) recv_counts[static_cast<std::size_t>(q)] = my_rows * counts[static_cast<std::size_t>(q)];
  std::vector<T> received(my_rows * total_cols);
  collectives::alltoallv<T>(world, local, table.count, received, recv_counts);

  // Receive side of the baseline: a second mapping matrix + buffer places
  // every element by its global column.
  const std::size_t n = received.size();
  memmon::ScopedRecord map_rec(&world.ledger(), "layout.ref.recv_map", memmon::Category::temporary,
                               static_cast<std::int64_t>(n * sizeof(std::int32_t)));
  memmon::ScopedRecord buf_rec(&world.ledger(), "layout.ref.recv_buffer", memmon::Category::temporary,
                               static_cast<std::int64_t>(n * sizeof(T)));
  std::vector<std::int32_t> map(n);
  std::size_t pos = 0, col0 = 0;
  for (int q = 0; q < p; ++q) {
    const std::size_t cq = counts[static_cast<std::size_t>(q)];
    for (std::size_t j = 0; j < cq; ++j)
      for (std::size_t i = 0; i < my_rows; ++i) map[pos++] = static_cast<std::int32_t>((col0 + j) * my_rows + i);
    col0 += cq;
  }
  std::vector<T> out(n);
  for (std::size_t k = 0; k < n; ++k) out[static_cast<std::size_t>(map[k])] = received[k];
  return DistMatrix<T>::adopt(world, Layout::row_block, rows, counts, std::move(out));
}

template <typename T>
DistMatrix<T> row_to_col_reference(DistMatrix<T> m) {
  if (m.layout() != Layout::row_block) throw InvalidArgument("row_to_col expects a row-block matrix");
  const World world = m.world();
  const int p = world.size();
  const std::size_t rows = m.rows();
  const auto counts = m.col_counts();
  const std::size_t my_rows = m.local_rows();
  const std::size_t my_cols = counts[static_cast<std::size_t>(world.rank())];

  std::vector<std::size_t> send_counts(static_cast<std::size_t>(p)), recv_counts(static_cast<std::size_t>(p));
  for (int q = 0; q < p; ++q) {
    send_counts[static_cast<std::size_t>(q)] = my_rows * counts[static_cast<std::size_t>(q)];
    recv_counts[static_cast<std::size_t>(q)] = part_size(rows, p, q) * my_cols;
  }
  std::vector<T> local = m.release();
  std::vector<T> received(rows * my_cols);
  collectives::alltoallv<T>(world, local, send_counts, received, recv_counts);
  unpack_reference(std::span<T>(received), SubBlockPlan::make(rows, my_cols, p), &world.ledger());
  return DistMatrix<T>::adopt(world, Layout::column_block, rows, counts, std::move(received));
}

template <typename T>
std::vector<T> gather_global(const DistMatrix<T>& m) {
  const World& world = m.world();
  const int p = world.size();
  constexpr std::uint32_t kTag = 0xFE20;
  for (int k = 1; k < p; ++k) world.send<T>((world.rank() + k) % p, kTag, m.local());

  std::vector<T> global(m.rows() * m.cols());
  auto place = [&](int owner, std::span<const T> block) {
    if (m.layout() == Layout::column_block) {
      std::size_t c0 = 0;
      for (int q = 0; q < owner; ++q) c0 += m.col_counts()[static_cast<std::size_t>(q)];
      if (block.size() != m.rows() * m.col_counts()[static_cast<std::size_t>(owner)])
        throw Error("gather_global: block size mismatch");
      std::copy(block.begin(), block.end(), global.begin() + static_cast<std::ptrdiff_t>(c0 * m.rows()));
    } else {
      const std::size_t r0 = part_start(m.rows(), p, owner);
      const std::size_t nr = part_size(m.rows(), p, owner);
      if (block.size() != nr * m.cols()) throw Error("gather_global: block size mismatch");
      for (std::size_t j = 0; j < m.cols(); ++j)
        for (std::size_t i = 0; i < nr; ++i) global[j * m.rows() + r0 + i] = block[j * nr + i];
    }
  };
  place(world.rank(), m.local());
  for (int k = 1; k < p; ++k) {
    const int q = (world.rank() - k + p) % p;
    auto block = world.recv<T>(q, kTag);
    place(q, block);
  }
  return global;
}

#define PWMINI_LAYOUT_INSTANTIATE(T)                                                        \
  template class DistMatrix<T>;                                                            \
  template PackTable pack_in_place<T>(std::span<T>, const SubBlockPlan&, memmon::MemoryLedger*); \
  template void unpack_in_place<T>(std::span<T>, const SubBlockPlan&, memmon::MemoryLedger*);    \
  template void pack_reference<T>(std::span<T>, const SubBlockPlan&, memmon::MemoryLedger*);     \
  template void unpack_reference<T>(std::span<T>, const SubBlockPlan&, memmon::MemoryLedger*);   \
  template DistMatrix<T> col_to_row<T>(DistMatrix<T>);                                     \
  template DistMatrix<T> row_to_col<T>(DistMatrix<T>);                                     \
  template DistMatrix<T> col_to_row_reference<T>(DistMatrix<T>);                           \
  template DistMatrix<T> row_to_col_reference<T>(DistMatrix<T>);                           \
  template std::vector<T> gather_global<T>(const DistMatrix<T>&);

PWMINI_LAYOUT_INSTANTIATE(double)
PWMINI_LAYOUT_INSTANTIATE(std::complex<double>)

#undef PWMINI_LAYOUT_INSTANTIATE

}  // namespace pwmini::layout
