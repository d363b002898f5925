#include "pwmini/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>

#include "pwmini/parallel.hpp"
#include "pwmini/wire.hpp"

namespace pwmini::pseudo {

namespace {

// Contribution of one atom to one column; shared by the serial reference
// and the OpenMP kernel so both perform identical arithmetic.
inline void apply_entry_column(const PseudoEntry& e, const cplx* psi, std::size_t rows, double dv, cplx* out) {
  for (std::uint32_t l = 0; l < e.num_projectors; ++l) {
    const cplx* beta = e.projectors.data() + static_cast<std::size_t>(l) * rows;
    cplx overlap = 0.0;
    for (std::size_t r = 0; r < rows; ++r) overlap += std::conj(beta[r]) * psi[r];
    const cplx coef = e.weights[l] * overlap * dv;
    for (std::size_t r = 0; r < rows; ++r) out[r] += coef * beta[r];
  }
}

}  // namespace

std::size_t record_bytes(std::uint32_t num_projectors, std::uint32_t grid_points) {
  return 8 + 4 + 4 + 4 + 16 * static_cast<std::size_t>(num_projectors) * grid_points + 8 * num_projectors;
}

std::size_t PseudoEntry::record_bytes() const { return pseudo::record_bytes(num_projectors, grid_points); }

void PseudoEntry::validate() const {
  if (num_projectors < 1) throw InvalidArgument("pseudopotential entry needs at least one projector");
  if (projectors.size() != static_cast<std::size_t>(num_projectors) * grid_points)
    throw InvalidArgument("projector storage does not match L * N_r");
  if (weights.size() != num_projectors) throw InvalidArgument("weight count does not match L");
}

void append_record(std::vector<std::byte>& out, const PseudoEntry& e) {
  e.validate();
  wire::put_le(out, e.atom_id);
  wire::put_le(out, e.kind);
  wire::put_le(out, e.num_projectors);
  wire::put_le(out, e.grid_points);
  for (const cplx& v : e.projectors) wire::put_c128(out, v);
  for (double w : e.weights) wire::put_f64(out, w);
}

std::vector<std::byte> serialize_entries(std::span<const PseudoEntry> entries) {
  std::size_t total = 0;
  for (const auto& e : entries) total += e.record_bytes();
  std::vector<std::byte> out;
  out.reserve(total);
  for (const auto& e : entries) append_record(out, e);
  return out;
}

std::vector<PseudoEntry> deserialize_entries(std::span<const std::byte> bytes) {
  wire::Reader rd(bytes);
  std::vector<PseudoEntry> out;
  while (!rd.done()) {
    PseudoEntry e;
    e.atom_id = rd.get_le<std::uint64_t>();
    e.kind = rd.get_le<std::uint32_t>();
    e.num_projectors = rd.get_le<std::uint32_t>();
    e.grid_points = rd.get_le<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(e.num_projectors) * e.grid_points;
    if (rd.remaining() < 16 * n + 8 * static_cast<std::size_t>(e.num_projectors)) throw Error("truncated record");
    e.projectors.resize(n);
    for (auto& v : e.projectors) v = rd.get_c128();
    e.weights.resize(e.num_projectors);
    for (auto& w : e.weights) w = rd.get_f64();
    e.validate();
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t AtomShard::bytes() const {
  std::size_t total = 0;
  for (const auto& e : entries) total += e.record_bytes();
  return total;
}

std::pair<std::size_t, std::size_t> shard_range(std::size_t atoms, int procs, int owner) {
  const std::size_t begin = layout::part_start(atoms, procs, owner);
  return {begin, begin + layout::part_size(atoms, procs, owner)};
}

AtomShard make_shard(int owner, int procs, std::span<const PseudoEntry> all) {
  AtomShard s;
  s.owner = owner;
  s.procs = procs;
  s.total_atoms = all.size();
  std::tie(s.begin, s.end) = shard_range(all.size(), procs, owner);
  s.entries.assign(all.begin() + static_cast<std::ptrdiff_t>(s.begin), all.begin() + static_cast<std::ptrdiff_t>(s.end));
  return s;
}

KindTable::KindTable(std::size_t capacity) : slots_(capacity) {
  if (capacity == 0) throw InvalidArgument("kind table capacity must be positive");
}

void KindTable::add(KindRecord record) {
  const int z = record.atomic_number;
  if (z < 0 || static_cast<std::size_t>(z) >= slots_.size())
    throw InvalidArgument("atomic number " + std::to_string(z) + " outside kind table capacity");
  if (!slots_[static_cast<std::size_t>(z)].present()) ++registered_;
  slots_[static_cast<std::size_t>(z)] = std::move(record);
}

const KindRecord& KindTable::lookup(int atomic_number) const {
  if (atomic_number < 0 || static_cast<std::size_t>(atomic_number) >= slots_.size())
    throw InvalidArgument("atomic number " + std::to_string(atomic_number) + " outside kind table capacity");
  ++probes_;
  return slots_[static_cast<std::size_t>(atomic_number)];
}

PseudoEntry synthetic_entry(std::uint64_t atom_id, const KindRecord& kind, const std::array<double, 3>& position,
                            const RealSpaceGrid& grid) {
  if (!kind.present()) throw InvalidArgument("synthetic_entry: empty kind slot");
  const std::size_t nproj = kind.weights.size();
  if (nproj < 1 || nproj > 8) throw InvalidArgument("projector count must be in [1, 8]");
  const std::size_t npts = grid.points();

  PseudoEntry e;
  e.atom_id = atom_id;
  e.kind = static_cast<std::uint32_t>(kind.atomic_number);
  e.num_projectors = static_cast<std::uint32_t>(nproj);
  e.grid_points = static_cast<std::uint32_t>(npts);
  e.weights = kind.weights;
  e.projectors.assign(nproj * npts, cplx{});

  const double inv2s2 = 1.0 / (2.0 * kind.projector_sigma * kind.projector_sigma);
  for (std::size_t idx = 0; idx < npts; ++idx) {
    const auto d = grid.displacement(grid.position(idx), position);
    const double g = std::exp(-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * inv2s2);
    const double poly[8] = {1.0,         d[0],        d[1],        d[2],
                            d[0] * d[1], d[1] * d[2], d[2] * d[0], d[0] * d[0] - d[1] * d[1]};
    for (std::size_t l = 0; l < nproj; ++l) e.projectors[l * npts + idx] = poly[l] * g;
  }
  const double dv = grid.dv();
  for (std::size_t l = 0; l < nproj; ++l) {
    double norm2 = 0.0;
    for (std::size_t idx = 0; idx < npts; ++idx) norm2 += std::norm(e.projectors[l * npts + idx]);
    norm2 *= dv;
    if (norm2 > 0.0) {
      const double s = 1.0 / std::sqrt(norm2);
      for (std::size_t idx = 0; idx < npts; ++idx) e.projectors[l * npts + idx] *= s;
    }
  }
  return e;
}

void apply_vnl_block_reference(std::span<const PseudoEntry> entries, std::span<const cplx> wf, std::size_t rows,
                               std::size_t ncols, double dv, std::span<cplx> out) {
  if (wf.size() != rows * ncols || out.size() != rows * ncols) throw InvalidArgument("block shape mismatch");
  for (const auto& e : entries) {
    if (e.grid_points != rows) throw InvalidArgument("projector length does not match grid");
    for (std::size_t j = 0; j < ncols; ++j) apply_entry_column(e, wf.data() + j * rows, rows, dv, out.data() + j * rows);
  }
}

void apply_entry(const PseudoEntry& entry, std::span<const cplx> wf, std::size_t rows, std::size_t ncols, double dv,
                 std::span<cplx> out) {
  if (entry.grid_points != rows) throw InvalidArgument("projector length does not match grid");
  if (wf.size() != rows * ncols || out.size() != rows * ncols) throw InvalidArgument("block shape mismatch");
  const long n = static_cast<long>(ncols);
  const int threads = kernel_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && n > 1)
  for (long j = 0; j < n; ++j) {
    const auto col = static_cast<std::size_t>(j);
    apply_entry_column(entry, wf.data() + col * rows, rows, dv, out.data() + col * rows);
  }
}

WaveMatrix apply_vnl_reference(const WaveMatrix& wf, std::span<const PseudoEntry> all_entries, double dv) {
  if (wf.layout() != layout::Layout::column_block) throw InvalidArgument("wavefunctions must be column-partitioned");
  WaveMatrix out = WaveMatrix::column_block(wf.world(), wf.rows(), wf.col_counts());
  apply_vnl_block_reference(all_entries, wf.local(), wf.rows(), wf.local_cols(), dv, out.local());
  return out;
}

WaveMatrix apply_vnl_distributed(const WaveMatrix& wf, const AtomShard& shard, int window, double dv,
                                 VnlStats* stats) {
  if (wf.layout() != layout::Layout::column_block) throw InvalidArgument("wavefunctions must be column-partitioned");
  if (window < 1) throw InvalidArgument("window must be >= 1");
  const transport::World& world = wf.world();
  const int procs = world.size();
  const int me = world.rank();
  if (shard.procs != procs || shard.owner != me) throw InvalidArgument("shard does not belong to this rank/world");
  if (shard_range(shard.total_atoms, procs, me) != std::make_pair(shard.begin, shard.end) ||
      shard.entries.size() != shard.size())
    throw InvalidArgument("shard range does not match the balanced atom split");

  const transport::Counters c0 = world.counters();
  VnlStats local_stats;
  WaveMatrix out = WaveMatrix::column_block(world, wf.rows(), wf.col_counts());
  const std::size_t rows = wf.rows(), ncols = wf.local_cols();
  auto apply_all = [&](std::span<const PseudoEntry> entries) {
    for (const auto& e : entries) apply_entry(e, wf.local(), rows, ncols, dv, out.local());
  };

  if (procs == 1) {
    apply_all(shard.entries);
    if (stats) *stats = local_stats;
    return out;
  }

  const int next = (me + 1) % procs;
  const int prev = (me - 1 + procs) % procs;
  auto forward = [&](std::vector<std::byte> raw, std::size_t atoms) {
    local_stats.shard_messages += 1;
    local_stats.shard_bytes_sent += static_cast<std::int64_t>(raw.size());
    local_stats.atoms_sent += atoms;
    transport::Message m;
    m.tag = kTagShard;
    m.type = transport::ElemType::bytes;
    m.payload = std::move(raw);
    world.send_message(prev, std::move(m));
  };

  // The shard from rank p + t is needed by p - 1 at step t + 1; the last
  // holder (t = P - 1) does not pass it on.
  forward(serialize_entries(shard.entries), shard.size());

  struct Buffered {
    std::vector<PseudoEntry> entries;
    std::unique_ptr<memmon::ScopedRecord> record;
  };
  std::deque<Buffered> pending;
  int fetched = 0;
  auto fetch = [&]() {
    const int t = ++fetched;
    transport::Message m = world.recv_message(next, kTagShard);
    auto entries = deserialize_entries(m.payload);
    const auto payload_bytes = static_cast<std::int64_t>(m.payload.size());
    if (t <= procs - 2) forward(std::move(m.payload), entries.size());
    pending.push_back(Buffered{std::move(entries),
                               std::make_unique<memmon::ScopedRecord>(&world.ledger(), "pseudo.window." + std::to_string(t),
                                                                      memmon::Category::temporary, payload_bytes)});
    local_stats.peak_buffered_shards = std::max(local_stats.peak_buffered_shards, static_cast<int>(pending.size()));
  };

  for (int t = 0; t < procs; ++t) {
    const int target = std::min(t + window - 1, procs - 1);
    while (fetched < target) fetch();
    if (t == 0) {
      apply_all(shard.entries);
    } else {
      apply_all(pending.front().entries);
      pending.pop_front();
    }
  }

  local_stats.traffic = world.counters() - c0;
  if (stats) *stats = local_stats;
  return out;
}

PseudoMemory pseudo_memory_report(std::uint64_t atoms, std::uint64_t entry_bytes, std::uint64_t procs) {
  if (atoms < 1 || procs < 1) throw InvalidArgument("atoms and procs must be >= 1");
  return {atoms * entry_bytes, (atoms + procs - 1) / procs * entry_bytes};
}

}  // namespace pwmini::pseudo
