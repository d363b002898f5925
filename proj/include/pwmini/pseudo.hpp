#pragma once

// Nonlocal pseudopotential storage and application.
//
//   V_NL psi = sum_a sum_l gamma_{a,l} beta_{a,l} <beta_{a,l}, psi> dV
//
// The replicated reference keeps every atom's projectors on every rank. The
// distributed version keeps one contiguous shard of atoms per rank and
// circulates the shards around a ring: at step t rank p applies the shard
// that originated at rank (p + t) mod P, receiving it from rank p + 1 and
// forwarding it to rank p - 1 until every rank has seen it once. Up to W
// upcoming shards are received ahead of use.

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pwmini/grid.hpp"
#include "pwmini/layout.hpp"
#include "pwmini/transport.hpp"

namespace pwmini::pseudo {

using cplx = std::complex<double>;
using WaveMatrix = layout::DistMatrix<cplx>;

struct PseudoEntry {
  std::uint64_t atom_id = 0;
  std::uint32_t kind = 0;
  std::uint32_t num_projectors = 0;
  std::uint32_t grid_points = 0;
  std::vector<cplx> projectors;  // num_projectors runs of grid_points values
  std::vector<double> weights;   // one coupling constant per projector

  std::span<const cplx> projector(std::size_t l) const {
    return std::span<const cplx>(projectors).subspan(l * grid_points, grid_points);
  }
  std::size_t record_bytes() const;
  void validate() const;
};

// Wire record: [u64 atom_id][u32 kind][u32 L][u32 N_r][L*N_r complex128]
// [L float64 weights], little-endian. A shard message is records back to back.
std::size_t record_bytes(std::uint32_t num_projectors, std::uint32_t grid_points);
void append_record(std::vector<std::byte>& out, const PseudoEntry& e);
std::vector<std::byte> serialize_entries(std::span<const PseudoEntry> entries);
std::vector<PseudoEntry> deserialize_entries(std::span<const std::byte> bytes);

struct AtomShard {
  int owner = 0;
  int procs = 1;
  std::size_t total_atoms = 0;
  std::size_t begin = 0;  // first global atom index
  std::size_t end = 0;
  std::vector<PseudoEntry> entries;

  std::size_t size() const { return end - begin; }
  std::size_t bytes() const;
};

// Atom range [begin, end) of rank `owner` in the balanced split of A atoms.
std::pair<std::size_t, std::size_t> shard_range(std::size_t atoms, int procs, int owner);

// Copies the owner's share of a replicated entry list.
AtomShard make_shard(int owner, int procs, std::span<const PseudoEntry> all);

// Per-kind parameters, stored in a table indexed directly by atomic number.
struct KindRecord {
  int atomic_number = -1;  // -1 marks an empty slot
  std::string symbol;
  double valence = 0.0;
  double well_depth = 0.0;  // local Gaussian well: -depth * exp(-d^2 / (2 width^2))
  double well_width = 1.0;
  double projector_sigma = 1.0;
  std::vector<double> weights;  // nonlocal couplings; size = projectors per atom

  bool present() const { return atomic_number >= 0; }
};

class KindTable {
 public:
  static constexpr std::size_t kDefaultCapacity = 200;

  explicit KindTable(std::size_t capacity = kDefaultCapacity);

  void add(KindRecord record);

  // One direct index. Absent kinds return the empty-slot record; atomic
  // numbers outside [0, capacity) throw InvalidArgument.
  const KindRecord& lookup(int atomic_number) const;

  std::size_t capacity() const { return slots_.size(); }
  std::size_t registered() const { return registered_; }

  // Number of slot reads performed by lookup() so far.
  std::size_t probes() const { return probes_; }

 private:
  std::vector<KindRecord> slots_;
  std::size_t registered_ = 0;
  mutable std::size_t probes_ = 0;
};

// Synthetic projectors: Gaussian exp(-d^2 / (2 sigma^2)) times
// {1, dx, dy, dz, dx dy, dy dz, dz dx, dx^2 - dy^2}, normalized to
// sum |beta|^2 dV = 1, with d the minimum-image displacement from the atom.
PseudoEntry synthetic_entry(std::uint64_t atom_id, const KindRecord& kind, const std::array<double, 3>& position,
                            const RealSpaceGrid& grid);

// Serial reference over a plain column-major block (rows x ncols):
// atoms in list order, projectors in order, columns one by one.
void apply_vnl_block_reference(std::span<const PseudoEntry> entries, std::span<const cplx> wf, std::size_t rows,
                               std::size_t ncols, double dv, std::span<cplx> out);

// OpenMP kernel: adds one atom's contribution to every local column. Columns
// are independent, so the per-column accumulation order matches the serial
// reference exactly.
void apply_entry(const PseudoEntry& entry, std::span<const cplx> wf, std::size_t rows, std::size_t ncols, double dv,
                 std::span<cplx> out);

WaveMatrix apply_vnl_reference(const WaveMatrix& wf, std::span<const PseudoEntry> all_entries, double dv);

struct VnlStats {
  transport::Counters traffic;
  int shard_messages = 0;
  std::int64_t shard_bytes_sent = 0;
  std::size_t atoms_sent = 0;
  int peak_buffered_shards = 0;
};

// Collective over wf.world(). `window` >= 1 is the prefetch depth.
WaveMatrix apply_vnl_distributed(const WaveMatrix& wf, const AtomShard& shard, int window, double dv,
                                 VnlStats* stats = nullptr);

struct PseudoMemory {
  std::uint64_t replicated_bytes = 0;
  std::uint64_t distributed_bytes = 0;
};

// replicated = A * entry_bytes, distributed = ceil(A / P) * entry_bytes.
PseudoMemory pseudo_memory_report(std::uint64_t atoms, std::uint64_t entry_bytes, std::uint64_t procs);

inline constexpr std::uint32_t kTagShard = 0xFE30;

}  // namespace pwmini::pseudo
