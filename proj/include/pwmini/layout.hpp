#pragma once

// Distributed dense matrices in column-block and row-block partitions and
// the repartition between them.
//
// A column-block matrix gives rank p whole columns (c_p of them, stored
// column-major as an r x c_p block). A row-block matrix gives rank p whole
// rows: the first r mod P ranks own floor(r/P)+1 rows, the rest floor(r/P),
// stored column-major as rows_p x c_total with columns in global order.
//
// The column-to-row switch packs each rank's block in place so that the rows
// headed for each destination form one contiguous run, then exchanges one
// message per rank pair. The packing never materializes a per-element
// mapping matrix or a second r x c_p buffer; offsets are computed on the fly
// and the only scratch is one sub-block.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pwmini/memmon.hpp"
#include "pwmini/transport.hpp"

namespace pwmini::layout {

using transport::World;

enum class Layout { column_block, row_block };

// Size/start of part k when n items are split over `parts` owners, the first
// n mod parts owners taking one extra item.
std::size_t part_size(std::size_t n, int parts, int k);
std::size_t part_start(std::size_t n, int parts, int k);
std::vector<std::size_t> balanced_counts(std::size_t n, int parts);

// Geometry of the sub-blocks of one rank's r x c_local column-major block.
struct SubBlockPlan {
  int procs = 1;
  std::size_t rows = 0;
  std::size_t cols_local = 0;
  std::size_t block_size = 0;  // floor(r / P)
  std::size_t remainder = 0;   // r mod P

  static SubBlockPlan make(std::size_t rows, std::size_t cols_local, int procs);

  // First row of the region whose sub-blocks have block_size rows.
  std::size_t boundary() const { return remainder * (block_size + 1); }
  std::size_t rows_of(int dest) const;
  std::size_t row_start(int dest) const;
  std::size_t sub_block_count() const { return static_cast<std::size_t>(procs) * cols_local; }
  // Offset of destination `dest`'s contiguous run once packed.
  std::size_t packed_offset(int dest) const { return row_start(dest) * cols_local; }
};

struct SubBlock {
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const SubBlock&) const = default;
};

// Unpacked (column-major) position of the rows of column `col` owned by
// `dest`. O(1), throws InvalidArgument when out of range.
SubBlock map_index(const SubBlockPlan& plan, std::size_t col, int dest);

// Per-destination (offset, count) of the packed runs.
struct PackTable {
  std::vector<std::size_t> offset;
  std::vector<std::size_t> count;
};

PackTable pack_table(const SubBlockPlan& plan);

// Rearranges `local` (r x c_local, column-major) so that destination d's
// rows x all local columns form a contiguous column-major run at
// plan.packed_offset(d). Scratch: one sub-block, recorded as temporary
// memory in `ledger` when given.
template <typename T>
PackTable pack_in_place(std::span<T> local, const SubBlockPlan& plan,
                        memmon::MemoryLedger* ledger = nullptr);

// Exact inverse of pack_in_place.
template <typename T>
void unpack_in_place(std::span<T> packed, const SubBlockPlan& plan,
                     memmon::MemoryLedger* ledger = nullptr);

// Serial reference: explicit per-element mapping matrix and full buffer.
template <typename T>
void pack_reference(std::span<T> local, const SubBlockPlan& plan,
                    memmon::MemoryLedger* ledger = nullptr);
template <typename T>
void unpack_reference(std::span<T> packed, const SubBlockPlan& plan,
                      memmon::MemoryLedger* ledger = nullptr);

// Bytes of the mapping matrices and buffers the in-place scheme avoids:
// an 8rc buffer and a 4rc map, on both sides of the exchange.
std::uint64_t buffer_cost_model(std::uint64_t rows, std::uint64_t cols);

template <typename T>
class DistMatrix {
 public:
  // Zero matrix. Column counts default to the balanced split; an explicit
  // per-rank count list is allowed for column-block matrices.
  static DistMatrix column_block(World world, std::size_t rows, std::size_t cols);
  static DistMatrix column_block(World world, std::size_t rows, std::vector<std::size_t> col_counts);
  static DistMatrix row_block(World world, std::size_t rows, std::size_t cols);
  static DistMatrix row_block(World world, std::size_t rows, std::vector<std::size_t> col_counts);

  // Wraps existing local storage; its size must match the local shape.
  static DistMatrix adopt(World world, Layout layout, std::size_t rows,
                          std::vector<std::size_t> col_counts, std::vector<T> local);

  // This rank's share of a replicated global column-major matrix.
  static DistMatrix from_global(World world, Layout layout, std::size_t rows, std::size_t cols,
                                std::span<const T> global);

  Layout layout() const { return layout_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t local_rows() const;
  std::size_t local_cols() const;
  // Global index of the first local column (column-block) or row (row-block).
  std::size_t first_col() const;
  std::size_t first_row() const;
  const std::vector<std::size_t>& col_counts() const { return col_counts_; }

  std::span<T> local() { return local_; }
  std::span<const T> local() const { return local_; }
  std::span<T> local_col(std::size_t j) { return std::span<T>(local_).subspan(j * local_rows(), local_rows()); }
  std::span<const T> local_col(std::size_t j) const {
    return std::span<const T>(local_).subspan(j * local_rows(), local_rows());
  }
  T& operator()(std::size_t i, std::size_t j) { return local_[j * local_rows() + i]; }
  const T& operator()(std::size_t i, std::size_t j) const { return local_[j * local_rows() + i]; }

  const World& world() const { return world_; }

  // Moves the local storage out, leaving the matrix empty.
  std::vector<T> release() { return std::move(local_); }

 private:
  DistMatrix(World world, Layout layout, std::size_t rows, std::vector<std::size_t> col_counts);

  World world_;
  Layout layout_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::size_t> col_counts_;
  std::vector<T> local_;
};

// Collective. Result: this rank's rows for all columns.
template <typename T>
DistMatrix<T> col_to_row(DistMatrix<T> m);

// Collective inverse of col_to_row; restores the column counts recorded in m.
template <typename T>
DistMatrix<T> row_to_col(DistMatrix<T> m);

// Collective. Every rank receives the full global column-major matrix.
template <typename T>
std::vector<T> gather_global(const DistMatrix<T>& m);

// Mapping-matrix + buffer version of col_to_row/row_to_col kept as the
// comparison baseline for the repartition benchmark.
template <typename T>
DistMatrix<T> col_to_row_reference(DistMatrix<T> m);
template <typename T>
DistMatrix<T> row_to_col_reference(DistMatrix<T> m);

}  // namespace pwmini::layout
