#pragma once

// Gamma-point plane-wave SCF solver on a periodic orthorhombic cell.
//
// Wavefunctions are stored as real-space grid samples, distributed by whole
// columns. The Hamiltonian is
//   H psi = F^-1(|G|^2 / 2 . F psi) + V_loc psi + V_NL psi
// with V_loc = V_ext + V_H (no exchange-correlation). Each outer step runs a
// few LOBPCG-lite sweeps at fixed potential, rebuilds the density with two
// electrons per occupied orbital and mixes it linearly.

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pwmini/fft.hpp"
#include "pwmini/grid.hpp"
#include "pwmini/layout.hpp"
#include "pwmini/pseudo.hpp"
#include "pwmini/transport.hpp"

namespace pwmini::dft {

using cplx = std::complex<double>;
using WaveMatrix = layout::DistMatrix<cplx>;
using transport::World;

struct PwGrid {
  double ecut = 0.0;                 // Hartree
  std::array<double, 3> length{};    // Bohr
  std::array<int, 3> n{1, 1, 1};

  double volume() const { return length[0] * length[1] * length[2]; }
  std::size_t points() const { return real_space().points(); }
  double dv() const { return real_space().dv(); }
  RealSpaceGrid real_space() const { return RealSpaceGrid{n, length}; }
};

// round(sqrt(2 E_cut) L / pi), at least 1, before FFT-size rounding.
int raw_grid_count(double ecut, double length);

// Per axis: raw_grid_count rounded up to the next length whose prime factors
// are all in {2, 3, 5, 7, 11}. Throws InvalidArgument on nonpositive input.
PwGrid grid_from_ecut(double ecut, const std::array<double, 3>& length);

struct Atom {
  std::array<double, 3> position{};  // Bohr, wrapped into the cell
  int kind = 0;                      // atomic number
};

struct SolverOptions {
  int n_wf = 4;
  int inner_iters = 3;
  double mix = 0.5;
  double tol = 1e-7;       // density residual ||rho_out - rho_in||_2 dV
  double eig_tol = 1e-6;   // max eigen-residual ||H psi - lambda psi|| at exit
  int max_iter = 30;
  int window = 2;          // pseudopotential prefetch depth
  int allreduce_width = 0; // C of the multistage allreduce; 0 picks min(4, P)
  int eig_procs = 0;       // ranks in the eigensolve subgroup; 0 asks the planner
  bool hartree = true;
  std::uint64_t seed = 1;
};

struct SystemConfig {
  PwGrid grid;
  std::vector<pseudo::KindRecord> kinds;
  std::vector<Atom> atoms;
  int electrons = 0;
  SolverOptions solver;

  pseudo::KindTable kind_table() const;
};

// JSON system definition:
//   {"cell": [Lx, Ly, Lz], "ecut": E,
//    "kinds": [{"z": 1, "symbol": "H", "valence": 1, "well_depth": 1.0,
//               "well_width": 1.0, "projector_sigma": 0.8, "weights": [0.5]}],
//    "atoms": [{"kind": 1, "position": [x, y, z]}],
//    "electrons": 2, "solver": {"n_wf": 4, ...}}
// "electrons" defaults to the summed valence. Errors name the source line.
SystemConfig parse_system_config(const std::string& text, const std::string& source = "<config>");
SystemConfig load_system_config(const std::string& path);

// |G|^2 / 2 for every grid point in FFT index order.
std::vector<double> kinetic_factors(const PwGrid& grid);

// Sum of Gaussian wells -depth exp(-d^2 / (2 width^2)) at the atom sites.
std::vector<double> external_potential(const PwGrid& grid, const pseudo::KindTable& kinds,
                                       std::span<const Atom> atoms);

// V_H(G) = 4 pi rho(G) / |G|^2, V_H(0) = 0.
std::vector<double> hartree_potential(const PwGrid& grid, std::span<const double> rho);

// Projector entries of every atom, in atom order.
std::vector<pseudo::PseudoEntry> build_projectors(const PwGrid& grid, const pseudo::KindTable& kinds,
                                                  std::span<const Atom> atoms);

struct PhaseTimings {
  double hamiltonian = 0.0;
  double repartition = 0.0;
  double allreduce = 0.0;
  double rayleigh_ritz = 0.0;

  PhaseTimings& operator+=(const PhaseTimings& o);
};

class Hamiltonian {
 public:
  // `shard` is this rank's share of the projector table.
  Hamiltonian(const World& world, PwGrid grid, pseudo::AtomShard shard, int window);

  const PwGrid& grid() const { return grid_; }
  std::span<const double> kinetic() const { return kinetic_; }
  std::span<const double> local_potential() const { return v_loc_; }
  void set_local_potential(std::vector<double> v);

  // Collective over psi.world().
  WaveMatrix apply(const WaveMatrix& psi, PhaseTimings* timings = nullptr) const;

  // Kinetic + local part on a plain column-major block; rank-local.
  void apply_local(std::span<const cplx> in, std::size_t ncols, std::span<cplx> out) const;

 private:
  PwGrid grid_;
  fft::Fft3d fft_;
  std::vector<double> kinetic_;
  std::vector<double> v_loc_;
  pseudo::AtomShard shard_;
  int window_;
  memmon::ScopedRecord shard_record_;
};

// Replicated column-major (a.cols x b.cols) matrix a^H b dV. Both operands
// are switched to row blocks, multiplied locally and summed with the
// multistage allreduce of width `width`.
std::vector<cplx> subspace_project(const WaveMatrix& a, const WaveMatrix& b, double dv, int width,
                                   PhaseTimings* timings = nullptr);

struct RitzPairs {
  std::vector<double> values;  // ascending, `keep` of them
  std::vector<cplx> vectors;   // n x keep, column-major
};

// Lowest `keep` eigenpairs of the Hermitian pencil (h, overlap); an empty
// overlap means the identity. Rank 0 of a subgroup of `eig_procs` ranks
// solves; the result reaches every rank of `world`. Throws InvalidArgument
// on a non-Hermitian h.
RitzPairs solve_subspace(const World& world, std::span<const cplx> h, std::span<const cplx> overlap, std::size_t n,
                         std::size_t keep, int eig_procs);

// Y U[:, 0:keep] with the result spread as `out_counts` columns per rank.
WaveMatrix rotate(const WaveMatrix& y, std::span<const cplx> u, std::size_t keep,
                  std::vector<std::size_t> out_counts, PhaseTimings* timings = nullptr);

struct RayleighRitzResult {
  std::vector<double> values;
  WaveMatrix psi;
};

// s = psi^H H psi dV, replicated. Returns ascending values and psi U.
RayleighRitzResult rayleigh_ritz(std::span<const cplx> s, const WaveMatrix& psi, int eig_procs,
                                 PhaseTimings* timings = nullptr);

// rho(r) = 2 sum_{j < N_e / 2} |psi_j(r)|^2, replicated. Throws when the
// occupied count exceeds the number of columns.
std::vector<double> compute_density(const WaveMatrix& psi, int electrons, PhaseTimings* timings = nullptr);

double integrate(std::span<const double> field, double dv);

// max |psi^H psi dV - I|.
double orthonormality_error(const WaveMatrix& psi, double dv, int width);

// Cholesky-QR: psi <- psi L^-H with psi^H psi dV = L L^H.
WaveMatrix orthonormalize(const WaveMatrix& psi, double dv, int width, int eig_procs);

// Seeded random columns, independent of the rank count, orthonormalized.
WaveMatrix random_wavefunctions(const World& world, const PwGrid& grid, std::size_t n_wf, std::uint64_t seed,
                                int width);

struct InnerResult {
  std::vector<double> values;
  std::vector<double> sweep_sums;  // sum of Ritz values after each sweep
  double max_residual = 0.0;       // at the start of the last sweep
};

// LOBPCG without the P block: Rayleigh-Ritz on [psi, K r] with the
// preconditioner K = 1 / (|G|^2 / 2 + 1). `psi` is replaced.
InnerResult lobpcg_lite(const Hamiltonian& h, WaveMatrix& psi, std::span<const double> values, int sweeps,
                        int width, int eig_procs, PhaseTimings* timings = nullptr);

struct IterationRecord {
  int iter = 0;
  double density_residual = 0.0;
  double potential_residual = 0.0;
  double charge = 0.0;  // integral of rho_out
  double max_eig_residual = 0.0;
  double orthonormality = 0.0;
  double e_band = 0.0;
  double e_hartree = 0.0;
  double e_total = 0.0;
  std::vector<double> eigenvalues;
  std::vector<double> sweep_sums;
  PhaseTimings timings;
};

struct ScfResult {
  bool converged = false;
  int iterations = 0;
  int eig_procs = 1;
  int allreduce_width = 1;
  std::vector<double> eigenvalues;
  std::vector<double> density;          // last rho_out
  std::vector<double> local_potential;  // potential of the last eigensolve
  double e_total = 0.0;
  std::vector<IterationRecord> history;
  PhaseTimings timings;
};

// Collective; every rank returns the same result.
ScfResult scf_run(const World& world, const SystemConfig& cfg);

}  // namespace pwmini::dft
