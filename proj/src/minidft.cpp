#include "pwmini/minidft.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstring>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json_util.hpp"
#include "pwmini/collectives.hpp"
#include "pwmini/error.hpp"
#include "pwmini/parallel.hpp"
#include "pwmini/planner.hpp"

namespace pwmini::dft {

namespace {

using Clock = std::chrono::steady_clock;
using MatC = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic>;
using MapC = Eigen::Map<MatC>;
using CMapC = Eigen::Map<const MatC>;

constexpr std::uint32_t kTagSubspace = 0xFE40;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int effective_width(int width, int procs) { return std::clamp(width > 0 ? width : 4, 1, procs); }

// Rank 0 fills `payload`; afterwards every rank of `world` holds a copy. The
// first `group` ranks form a subgroup fed by a broadcast; every other rank q
// receives from subgroup member q mod group.
void distribute_from_root(const World& world, int group, std::vector<double>& payload) {
  const int procs = world.size();
  group = std::clamp(group, 1, procs);
  const int me = world.rank();
  std::vector<int> members(static_cast<std::size_t>(group));
  for (int k = 0; k < group; ++k) members[static_cast<std::size_t>(k)] = k;
  if (auto sub = world.subgroup(members)) {
    collectives::bcast<double>(*sub, 0, payload);
    for (int q = me + group; q < procs; q += group) world.send<double>(q, kTagSubspace, payload);
  } else {
    world.recv_into<double>(me % group, kTagSubspace, payload);
  }
}

void check_hermitian(std::span<const cplx> a, std::size_t n, const char* what) {
  if (a.size() != n * n) throw InvalidArgument(std::string(what) + " has the wrong size");
  double scale = 1.0, dev = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      scale = std::max(scale, std::abs(a[i + j * n]));
      dev = std::max(dev, std::abs(a[i + j * n] - std::conj(a[j + i * n])));
    }
  if (dev > 1e-8 * scale) throw InvalidArgument(std::string(what) + " is not Hermitian");
}

std::vector<double> pack_pairs(const std::vector<double>& values, const MatC& u) {
  std::vector<double> out(values);
  const auto* raw = reinterpret_cast<const double*>(u.data());
  out.insert(out.end(), raw, raw + 2 * u.size());
  return out;
}

// Preconditioned, unit-norm residual direction of one column.
void precondition(const fft::Fft3d& fft, std::span<const double> kinetic, std::span<cplx> col, double dv) {
  fft.forward(col);
  for (std::size_t i = 0; i < col.size(); ++i) col[i] /= kinetic[i] + 1.0;
  fft.inverse(col);
  double norm2 = 0.0;
  for (const cplx& v : col) norm2 += std::norm(v);
  norm2 *= dv;
  if (norm2 > 0.0) {
    const double s = 1.0 / std::sqrt(norm2);
    for (cplx& v : col) v *= s;
  }
}

// Places two column-block matrices with the same per-rank counts side by
// side rank by rank: [a_local, b_local] on every rank.
WaveMatrix side_by_side(const WaveMatrix& a, const WaveMatrix& b) {
  std::vector<std::size_t> counts(a.col_counts().size());
  for (std::size_t p = 0; p < counts.size(); ++p) counts[p] = a.col_counts()[p] + b.col_counts()[p];
  std::vector<cplx> data(a.local().begin(), a.local().end());
  data.insert(data.end(), b.local().begin(), b.local().end());
  return WaveMatrix::adopt(a.world(), layout::Layout::column_block, a.rows(), std::move(counts), std::move(data));
}

}  // namespace

int raw_grid_count(double ecut, double length) {
  if (!(ecut > 0.0) || !(length > 0.0)) throw InvalidArgument("E_cut and cell lengths must be positive");
  const long long raw = std::llround(std::sqrt(2.0 * ecut) * length / std::numbers::pi);
  return static_cast<int>(std::max(raw, 1LL));
}

PwGrid grid_from_ecut(double ecut, const std::array<double, 3>& length) {
  PwGrid g;
  g.ecut = ecut;
  g.length = length;
  for (std::size_t k = 0; k < 3; ++k)
    g.n[k] = static_cast<int>(fft::next_fft_size(static_cast<std::size_t>(raw_grid_count(ecut, length[k]))));
  return g;
}

pseudo::KindTable SystemConfig::kind_table() const {
  pseudo::KindTable t;
  for (const auto& k : kinds) t.add(k);
  return t;
}

SystemConfig parse_system_config(const std::string& text, const std::string& source) {
  detail::JsonDoc doc(text, source);
  const auto& root = doc.root();
  doc.reject_unknown(root, {"cell", "ecut", "kinds", "atoms", "electrons", "solver"});
  SystemConfig cfg;

  const auto& cell = doc.require(root, "cell");
  if (!cell.is_array() || cell.size() != 3) doc.fail("cell", "\"cell\" must hold three lengths");
  std::array<double, 3> length{};
  for (std::size_t k = 0; k < 3; ++k) {
    length[k] = doc.number(cell[k], "cell");
    if (!(length[k] > 0.0)) doc.fail("cell", "cell lengths must be positive");
  }
  const double ecut = doc.number(doc.require(root, "ecut"), "ecut");
  if (!(ecut > 0.0)) doc.fail("ecut", "\"ecut\" must be positive");
  cfg.grid = grid_from_ecut(ecut, length);

  pseudo::KindTable table;
  doc.optional(root, "kinds", [&](const auto& list) {
    if (!list.is_array()) doc.fail("kinds", "\"kinds\" must be a list");
    for (const auto& k : list) {
      if (!k.is_object()) doc.fail("kinds", "every kind must be an object");
      doc.reject_unknown(k, {"z", "symbol", "valence", "well_depth", "well_width", "projector_sigma", "weights"});
      pseudo::KindRecord r;
      r.atomic_number = static_cast<int>(doc.integer(doc.require(k, "z"), "z"));
      if (r.atomic_number < 0 || static_cast<std::size_t>(r.atomic_number) >= table.capacity())
        doc.fail("z", "atomic number out of range");
      doc.optional(k, "symbol", [&](const auto& v) { r.symbol = doc.string(v, "symbol"); });
      doc.optional(k, "valence", [&](const auto& v) { r.valence = doc.number(v, "valence"); });
      doc.optional(k, "well_depth", [&](const auto& v) { r.well_depth = doc.number(v, "well_depth"); });
      doc.optional(k, "well_width", [&](const auto& v) { r.well_width = doc.number(v, "well_width"); });
      doc.optional(k, "projector_sigma", [&](const auto& v) { r.projector_sigma = doc.number(v, "projector_sigma"); });
      if (!(r.well_width > 0.0)) doc.fail("well_width", "\"well_width\" must be positive");
      if (!(r.projector_sigma > 0.0)) doc.fail("projector_sigma", "\"projector_sigma\" must be positive");
      doc.optional(k, "weights", [&](const auto& v) {
        if (!v.is_array() || v.size() > 8) doc.fail("weights", "\"weights\" must be a list of at most 8 numbers");
        for (const auto& w : v) r.weights.push_back(doc.number(w, "weights"));
      });
      table.add(r);
      cfg.kinds.push_back(std::move(r));
    }
  });

  double valence = 0.0;
  doc.optional(root, "atoms", [&](const auto& list) {
    if (!list.is_array()) doc.fail("atoms", "\"atoms\" must be a list");
    for (const auto& a : list) {
      if (!a.is_object()) doc.fail("atoms", "every atom must be an object");
      doc.reject_unknown(a, {"kind", "position"});
      Atom atom;
      atom.kind = static_cast<int>(doc.integer(doc.require(a, "kind"), "kind"));
      if (atom.kind < 0 || static_cast<std::size_t>(atom.kind) >= table.capacity() ||
          !table.lookup(atom.kind).present())
        doc.fail("kind", "atom refers to unknown kind " + std::to_string(atom.kind));
      const auto& pos = doc.require(a, "position");
      if (!pos.is_array() || pos.size() != 3) doc.fail("position", "\"position\" must hold three coordinates");
      for (std::size_t k = 0; k < 3; ++k) {
        const double x = doc.number(pos[k], "position");
        atom.position[k] = x - length[k] * std::floor(x / length[k]);
      }
      valence += table.lookup(atom.kind).valence;
      cfg.atoms.push_back(atom);
    }
  });

  cfg.electrons = static_cast<int>(std::llround(valence));
  doc.optional(root, "electrons", [&](const auto& v) { cfg.electrons = static_cast<int>(doc.integer(v, "electrons")); });
  if (cfg.electrons < 2 || cfg.electrons % 2 != 0)
    doc.fail("electrons", "electron count must be even and at least 2 (got " + std::to_string(cfg.electrons) + ")");

  doc.optional(root, "solver", [&](const auto& s) {
    if (!s.is_object()) doc.fail("solver", "\"solver\" must be an object");
    doc.reject_unknown(s, {"n_wf", "inner_iters", "mix", "tol", "eig_tol", "max_iter", "window", "allreduce_width",
                           "eig_procs", "hartree", "seed"});
    auto& o = cfg.solver;
    doc.optional(s, "n_wf", [&](const auto& v) { o.n_wf = static_cast<int>(doc.integer(v, "n_wf")); });
    doc.optional(s, "inner_iters", [&](const auto& v) { o.inner_iters = static_cast<int>(doc.integer(v, "inner_iters")); });
    doc.optional(s, "mix", [&](const auto& v) { o.mix = doc.number(v, "mix"); });
    doc.optional(s, "tol", [&](const auto& v) { o.tol = doc.number(v, "tol"); });
    doc.optional(s, "eig_tol", [&](const auto& v) { o.eig_tol = doc.number(v, "eig_tol"); });
    doc.optional(s, "max_iter", [&](const auto& v) { o.max_iter = static_cast<int>(doc.integer(v, "max_iter")); });
    doc.optional(s, "window", [&](const auto& v) { o.window = static_cast<int>(doc.integer(v, "window")); });
    doc.optional(s, "allreduce_width",
                 [&](const auto& v) { o.allreduce_width = static_cast<int>(doc.integer(v, "allreduce_width")); });
    doc.optional(s, "eig_procs", [&](const auto& v) { o.eig_procs = static_cast<int>(doc.integer(v, "eig_procs")); });
    doc.optional(s, "hartree", [&](const auto& v) { o.hartree = doc.boolean(v, "hartree"); });
    doc.optional(s, "seed", [&](const auto& v) { o.seed = static_cast<std::uint64_t>(doc.integer(v, "seed")); });
    if (o.n_wf < 1) doc.fail("n_wf", "\"n_wf\" must be >= 1");
    if (o.inner_iters < 1) doc.fail("inner_iters", "\"inner_iters\" must be >= 1");
    if (!(o.mix > 0.0 && o.mix <= 1.0)) doc.fail("mix", "\"mix\" must lie in (0, 1]");
    if (o.max_iter < 1) doc.fail("max_iter", "\"max_iter\" must be >= 1");
    if (o.window < 1) doc.fail("window", "\"window\" must be >= 1");
  });
  if (cfg.electrons > 2 * cfg.solver.n_wf)
    doc.fail("electrons", "electron count exceeds twice the number of wavefunctions");
  if (static_cast<std::size_t>(cfg.solver.n_wf) > cfg.grid.points())
    doc.fail("n_wf", "more wavefunctions than grid points");
  return cfg;
}

SystemConfig load_system_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_system_config(ss.str(), path);
}

std::vector<double> kinetic_factors(const PwGrid& grid) {
  const auto nx = static_cast<std::size_t>(grid.n[0]), ny = static_cast<std::size_t>(grid.n[1]),
             nz = static_cast<std::size_t>(grid.n[2]);
  std::vector<double> out(nx * ny * nz);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const double gx = two_pi * static_cast<double>(fft::signed_frequency(x, nx)) / grid.length[0];
        const double gy = two_pi * static_cast<double>(fft::signed_frequency(y, ny)) / grid.length[1];
        const double gz = two_pi * static_cast<double>(fft::signed_frequency(z, nz)) / grid.length[2];
        out[x + nx * (y + ny * z)] = 0.5 * (gx * gx + gy * gy + gz * gz);
      }
  return out;
}

std::vector<double> external_potential(const PwGrid& grid, const pseudo::KindTable& kinds,
                                       std::span<const Atom> atoms) {
  const RealSpaceGrid rs = grid.real_space();
  std::vector<double> v(rs.points(), 0.0);
  for (const Atom& a : atoms) {
    const auto& k = kinds.lookup(a.kind);
    if (!k.present()) throw InvalidArgument("atom refers to unknown kind " + std::to_string(a.kind));
    const double inv2w2 = 1.0 / (2.0 * k.well_width * k.well_width);
    for (std::size_t idx = 0; idx < v.size(); ++idx) {
      const auto d = rs.displacement(rs.position(idx), a.position);
      v[idx] -= k.well_depth * std::exp(-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * inv2w2);
    }
  }
  return v;
}

std::vector<double> hartree_potential(const PwGrid& grid, std::span<const double> rho) {
  if (rho.size() != grid.points()) throw InvalidArgument("density does not match the grid");
  const auto kin = kinetic_factors(grid);
  fft::Fft3d fft(static_cast<std::size_t>(grid.n[0]), static_cast<std::size_t>(grid.n[1]),
                 static_cast<std::size_t>(grid.n[2]));
  std::vector<cplx> work(rho.begin(), rho.end());
  fft.forward(work);
  for (std::size_t i = 0; i < work.size(); ++i)
    work[i] = kin[i] > 0.0 ? work[i] * (4.0 * std::numbers::pi / (2.0 * kin[i])) : cplx{};
  fft.inverse(work);
  std::vector<double> v(work.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = work[i].real();
  return v;
}

std::vector<pseudo::PseudoEntry> build_projectors(const PwGrid& grid, const pseudo::KindTable& kinds,
                                                  std::span<const Atom> atoms) {
  std::vector<pseudo::PseudoEntry> out;
  const RealSpaceGrid rs = grid.real_space();
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    const auto& k = kinds.lookup(atoms[a].kind);
    if (!k.present()) throw InvalidArgument("atom refers to unknown kind " + std::to_string(atoms[a].kind));
    if (k.weights.empty()) continue;
    out.push_back(pseudo::synthetic_entry(a, k, atoms[a].position, rs));
  }
  return out;
}

PhaseTimings& PhaseTimings::operator+=(const PhaseTimings& o) {
  hamiltonian += o.hamiltonian;
  repartition += o.repartition;
  allreduce += o.allreduce;
  rayleigh_ritz += o.rayleigh_ritz;
  return *this;
}

namespace {
std::string next_shard_label() {
  static std::atomic<std::uint64_t> counter{0};
  return "pseudo.shard." + std::to_string(counter++);
}
}  // namespace

Hamiltonian::Hamiltonian(const World& world, PwGrid grid, pseudo::AtomShard shard, int window)
    : grid_(grid),
      fft_(static_cast<std::size_t>(grid.n[0]), static_cast<std::size_t>(grid.n[1]),
           static_cast<std::size_t>(grid.n[2])),
      kinetic_(kinetic_factors(grid)),
      v_loc_(grid.points(), 0.0),
      shard_(std::move(shard)),
      window_(window),
      shard_record_(&world.ledger(), next_shard_label(), memmon::Category::dft_data,
                    static_cast<std::int64_t>(shard_.bytes())) {
  if (window < 1) throw InvalidArgument("window must be >= 1");
  if (shard_.procs != world.size() || shard_.owner != world.rank())
    throw InvalidArgument("shard does not belong to this rank/world");
  for (const auto& e : shard_.entries)
    if (e.grid_points != grid_.points()) throw InvalidArgument("projector length does not match grid");
}

void Hamiltonian::set_local_potential(std::vector<double> v) {
  if (v.size() != grid_.points()) throw InvalidArgument("potential does not match the grid");
  v_loc_ = std::move(v);
}

void Hamiltonian::apply_local(std::span<const cplx> in, std::size_t ncols, std::span<cplx> out) const {
  const std::size_t rows = grid_.points();
  if (in.size() != rows * ncols || out.size() != rows * ncols) throw InvalidArgument("grid/state mismatch");
  const long n = static_cast<long>(ncols);
  const int threads = kernel_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && n > 1)
  for (long j = 0; j < n; ++j) {
    const std::size_t off = static_cast<std::size_t>(j) * rows;
    std::vector<cplx> work(in.begin() + static_cast<std::ptrdiff_t>(off),
                           in.begin() + static_cast<std::ptrdiff_t>(off + rows));
    fft_.forward(work);
    for (std::size_t i = 0; i < rows; ++i) work[i] *= kinetic_[i];
    fft_.inverse(work);
    for (std::size_t i = 0; i < rows; ++i) out[off + i] = work[i] + v_loc_[i] * in[off + i];
  }
}

WaveMatrix Hamiltonian::apply(const WaveMatrix& psi, PhaseTimings* timings) const {
  if (psi.layout() != layout::Layout::column_block) throw InvalidArgument("wavefunctions must be column-partitioned");
  if (psi.rows() != grid_.points()) throw InvalidArgument("grid/state mismatch");
  const auto t0 = Clock::now();
  WaveMatrix out = shard_.total_atoms > 0
                       ? pseudo::apply_vnl_distributed(psi, shard_, window_, grid_.dv())
                       : WaveMatrix::column_block(psi.world(), psi.rows(), psi.col_counts());
  std::vector<cplx> local(psi.local().size());
  apply_local(psi.local(), psi.local_cols(), local);
  auto dst = out.local();
  for (std::size_t i = 0; i < local.size(); ++i) dst[i] = local[i] + dst[i];
  if (timings) timings->hamiltonian += seconds_since(t0);
  return out;
}

std::vector<cplx> subspace_project(const WaveMatrix& a, const WaveMatrix& b, double dv, int width,
                                   PhaseTimings* timings) {
  if (a.layout() != layout::Layout::column_block || b.layout() != layout::Layout::column_block)
    throw InvalidArgument("subspace_project expects column-partitioned operands");
  if (a.rows() != b.rows()) throw InvalidArgument("dimension mismatch");
  const World& world = a.world();
  auto t0 = Clock::now();
  WaveMatrix ar = layout::col_to_row(a);
  WaveMatrix br = layout::col_to_row(b);
  if (timings) timings->repartition += seconds_since(t0);

  const auto rows = static_cast<Eigen::Index>(ar.local_rows());
  const auto na = static_cast<Eigen::Index>(a.cols()), nb = static_cast<Eigen::Index>(b.cols());
  std::vector<cplx> s(static_cast<std::size_t>(na * nb));
  MapC sm(s.data(), na, nb);
  if (rows > 0) {
    sm.noalias() = CMapC(ar.local().data(), rows, na).adjoint() * CMapC(br.local().data(), rows, nb);
    sm *= dv;
  } else {
    sm.setZero();
  }

  t0 = Clock::now();
  collectives::ReduceGrid grid(world.size(), effective_width(width, world.size()));
  collectives::multistage_allreduce(world, grid, std::span<double>(reinterpret_cast<double*>(s.data()), 2 * s.size()));
  if (timings) timings->allreduce += seconds_since(t0);
  return s;
}

RitzPairs solve_subspace(const World& world, std::span<const cplx> h, std::span<const cplx> overlap, std::size_t n,
                         std::size_t keep, int eig_procs) {
  check_hermitian(h, n, "subspace matrix");
  if (!overlap.empty()) check_hermitian(overlap, n, "overlap matrix");
  if (keep < 1 || keep > n) throw InvalidArgument("cannot keep " + std::to_string(keep) + " of " + std::to_string(n));
  const auto ni = static_cast<Eigen::Index>(n), ki = static_cast<Eigen::Index>(keep);

  std::vector<double> payload(keep + 2 * n * keep);
  if (world.rank() == 0) {
    const MatC hm = CMapC(h.data(), ni, ni);
    const MatC hs = (hm + hm.adjoint()) * 0.5;
    std::vector<double> values(keep);
    MatC u;
    if (overlap.empty()) {
      Eigen::SelfAdjointEigenSolver<MatC> es(hs);
      if (es.info() != Eigen::Success) throw Error("dense eigensolver failed");
      u = es.eigenvectors().leftCols(ki);
      for (std::size_t k = 0; k < keep; ++k) values[k] = es.eigenvalues()(static_cast<Eigen::Index>(k));
    } else {
      const MatC bm = CMapC(overlap.data(), ni, ni);
      Eigen::SelfAdjointEigenSolver<MatC> eb((bm + bm.adjoint()) * 0.5);
      if (eb.info() != Eigen::Success) throw Error("dense eigensolver failed");
      const double smax = eb.eigenvalues().maxCoeff();
      std::vector<Eigen::Index> kept;
      for (Eigen::Index k = 0; k < ni; ++k)
        if (eb.eigenvalues()(k) > 1e-10 * smax) kept.push_back(k);
      if (kept.size() < keep) throw Error("subspace basis is rank deficient");
      MatC x(ni, static_cast<Eigen::Index>(kept.size()));
      for (std::size_t c = 0; c < kept.size(); ++c)
        x.col(static_cast<Eigen::Index>(c)) = eb.eigenvectors().col(kept[c]) / std::sqrt(eb.eigenvalues()(kept[c]));
      const MatC hk = x.adjoint() * hs * x;
      Eigen::SelfAdjointEigenSolver<MatC> es((hk + hk.adjoint()) * 0.5);
      if (es.info() != Eigen::Success) throw Error("dense eigensolver failed");
      u = x * es.eigenvectors().leftCols(ki);
      for (std::size_t k = 0; k < keep; ++k) values[k] = es.eigenvalues()(static_cast<Eigen::Index>(k));
    }
    payload = pack_pairs(values, u);
  }
  distribute_from_root(world, eig_procs, payload);

  RitzPairs r;
  r.values.assign(payload.begin(), payload.begin() + static_cast<std::ptrdiff_t>(keep));
  r.vectors.resize(n * keep);
  std::memcpy(static_cast<void*>(r.vectors.data()), payload.data() + keep, 2 * n * keep * sizeof(double));
  return r;
}

WaveMatrix rotate(const WaveMatrix& y, std::span<const cplx> u, std::size_t keep, std::vector<std::size_t> out_counts,
                  PhaseTimings* timings) {
  const std::size_t ny = y.cols();
  if (u.size() < ny * keep) throw InvalidArgument("rotation matrix too small");
  std::size_t total = 0;
  for (auto c : out_counts) total += c;
  if (total != keep || out_counts.size() != static_cast<std::size_t>(y.world().size()))
    throw InvalidArgument("output column counts do not match");

  auto t0 = Clock::now();
  WaveMatrix yr = layout::col_to_row(y);
  if (timings) timings->repartition += seconds_since(t0);

  t0 = Clock::now();
  const auto rows = static_cast<Eigen::Index>(yr.local_rows());
  std::vector<cplx> out(yr.local_rows() * keep);
  if (rows > 0)
    MapC(out.data(), rows, static_cast<Eigen::Index>(keep)).noalias() =
        CMapC(yr.local().data(), rows, static_cast<Eigen::Index>(ny)) *
        CMapC(u.data(), static_cast<Eigen::Index>(ny), static_cast<Eigen::Index>(keep));
  if (timings) timings->rayleigh_ritz += seconds_since(t0);

  t0 = Clock::now();
  WaveMatrix res = layout::row_to_col(
      WaveMatrix::adopt(y.world(), layout::Layout::row_block, y.rows(), std::move(out_counts), std::move(out)));
  if (timings) timings->repartition += seconds_since(t0);
  return res;
}

RayleighRitzResult rayleigh_ritz(std::span<const cplx> s, const WaveMatrix& psi, int eig_procs,
                                 PhaseTimings* timings) {
  const std::size_t n = psi.cols();
  const auto t0 = Clock::now();
  RitzPairs rp = solve_subspace(psi.world(), s, {}, n, n, eig_procs);
  if (timings) timings->rayleigh_ritz += seconds_since(t0);
  return {std::move(rp.values), rotate(psi, rp.vectors, n, psi.col_counts(), timings)};
}

std::vector<double> compute_density(const WaveMatrix& psi, int electrons, PhaseTimings* timings) {
  if (electrons < 0 || electrons % 2 != 0) throw InvalidArgument("electron count must be even and nonnegative");
  const auto occupied = static_cast<std::size_t>(electrons / 2);
  if (occupied > psi.cols()) throw InvalidArgument("N_e exceeds twice the number of wavefunctions");
  std::vector<double> rho(psi.rows(), 0.0);
  for (std::size_t j = 0; j < psi.local_cols(); ++j) {
    if (psi.first_col() + j >= occupied) break;
    const auto col = psi.local_col(j);
    for (std::size_t i = 0; i < rho.size(); ++i) rho[i] += 2.0 * std::norm(col[i]);
  }
  const auto t0 = Clock::now();
  collectives::baseline_allreduce(psi.world(), rho);
  if (timings) timings->allreduce += seconds_since(t0);
  return rho;
}

double integrate(std::span<const double> field, double dv) {
  double s = 0.0;
  for (double v : field) s += v;
  return s * dv;
}

double orthonormality_error(const WaveMatrix& psi, double dv, int width) {
  const auto s = subspace_project(psi, psi, dv, width);
  const std::size_t n = psi.cols();
  double err = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(s[i + j * n] - (i == j ? 1.0 : 0.0)));
  return err;
}

WaveMatrix orthonormalize(const WaveMatrix& psi, double dv, int width, int eig_procs) {
  const std::size_t n = psi.cols();
  const auto ni = static_cast<Eigen::Index>(n);
  const auto s = subspace_project(psi, psi, dv, width);
  check_hermitian(s, n, "overlap matrix");
  std::vector<double> payload(2 * n * n);
  if (psi.world().rank() == 0) {
    const MatC sm = CMapC(s.data(), ni, ni);
    Eigen::LLT<MatC> llt((sm + sm.adjoint()) * 0.5);
    if (llt.info() != Eigen::Success) throw Error("wavefunctions are linearly dependent");
    const MatC linv = llt.matrixL().solve(MatC::Identity(ni, ni));
    payload = pack_pairs({}, linv.adjoint());
  }
  distribute_from_root(psi.world(), eig_procs, payload);
  std::vector<cplx> u(n * n);
  std::memcpy(static_cast<void*>(u.data()), payload.data(), payload.size() * sizeof(double));
  return rotate(psi, u, n, psi.col_counts());
}

WaveMatrix random_wavefunctions(const World& world, const PwGrid& grid, std::size_t n_wf, std::uint64_t seed,
                                int width) {
  const std::size_t rows = grid.points();
  if (n_wf < 1 || n_wf > rows) throw InvalidArgument("wavefunction count must lie in [1, grid points]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<cplx> global(rows * n_wf);
  for (auto& v : global) {
    const double re = dist(rng);
    v = {re, dist(rng)};
  }
  WaveMatrix psi = WaveMatrix::from_global(world, layout::Layout::column_block, rows, n_wf, global);
  psi = orthonormalize(psi, grid.dv(), width, 1);
  return orthonormalize(psi, grid.dv(), width, 1);
}

InnerResult lobpcg_lite(const Hamiltonian& h, WaveMatrix& psi, std::span<const double> values, int sweeps, int width,
                        int eig_procs, PhaseTimings* timings) {
  const std::size_t n = psi.cols();
  if (values.size() != n) throw InvalidArgument("one eigenvalue estimate per wavefunction required");
  if (sweeps < 1) throw InvalidArgument("at least one sweep required");
  const World& world = psi.world();
  const double dv = h.grid().dv();
  const std::size_t rows = psi.rows();
  const fft::Fft3d fft(static_cast<std::size_t>(h.grid().n[0]), static_cast<std::size_t>(h.grid().n[1]),
                       static_cast<std::size_t>(h.grid().n[2]));

  InnerResult res;
  res.values.assign(values.begin(), values.end());
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    WaveMatrix hpsi = h.apply(psi, timings);

    WaveMatrix w = WaveMatrix::column_block(world, rows, psi.col_counts());
    std::vector<double> norms(psi.local_cols());
    for (std::size_t j = 0; j < psi.local_cols(); ++j) {
      const double lambda = res.values[psi.first_col() + j];
      const auto p = psi.local_col(j), hp = hpsi.local_col(j);
      auto r = w.local_col(j);
      double norm2 = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        r[i] = hp[i] - lambda * p[i];
        norm2 += std::norm(r[i]);
      }
      norms[j] = std::sqrt(norm2 * dv);
      precondition(fft, h.kinetic(), r, dv);
    }
    const auto all_norms = collectives::allgatherv(world, norms);
    res.max_residual = all_norms.empty() ? 0.0 : *std::max_element(all_norms.begin(), all_norms.end());

    WaveMatrix hw = h.apply(w, timings);
    const WaveMatrix y = side_by_side(psi, w);
    const WaveMatrix hy = side_by_side(hpsi, hw);
    const auto s = subspace_project(y, hy, dv, width, timings);
    const auto b = subspace_project(y, y, dv, width, timings);

    const auto t0 = Clock::now();
    RitzPairs rp = solve_subspace(world, s, b, 2 * n, n, eig_procs);
    if (timings) timings->rayleigh_ritz += seconds_since(t0);
    psi = rotate(y, rp.vectors, n, psi.col_counts(), timings);
    if (orthonormality_error(psi, dv, width) > 1e-12) psi = orthonormalize(psi, dv, width, eig_procs);

    res.values = std::move(rp.values);
    double sum = 0.0;
    for (double v : res.values) sum += v;
    res.sweep_sums.push_back(sum);
  }
  return res;
}

ScfResult scf_run(const World& world, const SystemConfig& cfg) {
  const auto& opt = cfg.solver;
  const PwGrid& grid = cfg.grid;
  const int procs = world.size();
  const double dv = grid.dv();
  const auto n_wf = static_cast<std::size_t>(opt.n_wf);
  if (cfg.electrons < 2 || cfg.electrons % 2 != 0) throw InvalidArgument("electron count must be even and >= 2");
  if (cfg.electrons > 2 * opt.n_wf) throw InvalidArgument("N_e exceeds twice the number of wavefunctions");

  ScfResult out;
  out.allreduce_width = effective_width(opt.allreduce_width, procs);
  if (opt.eig_procs > 0) {
    out.eig_procs = std::min(opt.eig_procs, procs);
  } else {
    planner::PlanInput in;
    in.atoms = std::max<std::int64_t>(static_cast<std::int64_t>(cfg.atoms.size()), 1);
    in.p_avail = procs;
    in.phase = planner::Phase::subspace_eig;
    in.analytic = planner::AnalyticCost{static_cast<double>(2 * n_wf)};
    const auto pr = planner::plan(in);
    out.eig_procs = pr.feasible ? static_cast<int>(pr.p_opt) : 1;
  }
  const int width = out.allreduce_width;

  const pseudo::KindTable kinds = cfg.kind_table();
  const auto entries = build_projectors(grid, kinds, cfg.atoms);
  Hamiltonian ham(world, grid, pseudo::make_shard(world.rank(), procs, entries), opt.window);
  const auto vext = external_potential(grid, kinds, cfg.atoms);

  auto local_potential = [&](const std::vector<double>& vh) {
    std::vector<double> v(vext);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += vh[i];
    return v;
  };
  auto hartree = [&](const std::vector<double>& rho) {
    return opt.hartree ? hartree_potential(grid, rho) : std::vector<double>(rho.size(), 0.0);
  };
  auto l2dv = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s) * dv;
  };

  std::vector<double> rho_in(grid.points(), static_cast<double>(cfg.electrons) / grid.volume());
  std::vector<double> vh_in = hartree(rho_in);
  ham.set_local_potential(local_potential(vh_in));

  WaveMatrix psi = random_wavefunctions(world, grid, n_wf, opt.seed, width);
  std::vector<double> values;
  {
    PhaseTimings t;
    const WaveMatrix hpsi = ham.apply(psi, &t);
    const auto s = subspace_project(psi, hpsi, dv, width, &t);
    auto rr = rayleigh_ritz(s, psi, out.eig_procs, &t);
    psi = std::move(rr.psi);
    values = std::move(rr.values);
    out.timings += t;
  }

  const std::size_t occupied = static_cast<std::size_t>(cfg.electrons / 2);
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    IterationRecord rec;
    rec.iter = iter;
    if (iter > 1) {
      vh_in = hartree(rho_in);
      ham.set_local_potential(local_potential(vh_in));
    }
    InnerResult inner = lobpcg_lite(ham, psi, values, opt.inner_iters, width, out.eig_procs, &rec.timings);
    values = inner.values;

    const auto rho_out = compute_density(psi, cfg.electrons, &rec.timings);
    const auto vh_out = hartree(rho_out);
    rec.density_residual = l2dv(rho_out, rho_in);
    rec.potential_residual = l2dv(vh_out, vh_in);
    rec.charge = integrate(rho_out, dv);
    rec.max_eig_residual = inner.max_residual;
    rec.orthonormality = orthonormality_error(psi, dv, width);
    for (std::size_t j = 0; j < occupied; ++j) rec.e_band += 2.0 * values[j];
    double eh = 0.0;
    for (std::size_t i = 0; i < rho_in.size(); ++i) eh += rho_in[i] * vh_in[i];
    rec.e_hartree = 0.5 * eh * dv;
    rec.e_total = rec.e_band - rec.e_hartree;
    rec.eigenvalues = values;
    rec.sweep_sums = inner.sweep_sums;

    out.timings += rec.timings;
    out.history.push_back(rec);
    out.iterations = iter;
    out.density = rho_out;
    out.e_total = rec.e_total;

    if (rec.density_residual < opt.tol && inner.max_residual < opt.eig_tol) {
      out.converged = true;
      break;
    }
    for (std::size_t i = 0; i < rho_in.size(); ++i) rho_in[i] = (1.0 - opt.mix) * rho_in[i] + opt.mix * rho_out[i];
  }
  out.eigenvalues = values;
  out.local_potential.assign(ham.local_potential().begin(), ham.local_potential().end());
  return out;
}

}  // namespace pwmini::dft
