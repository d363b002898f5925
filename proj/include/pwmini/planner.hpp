#pragma once

// Process-count selection per execution phase.
//
// Candidates are the powers of two in [P_min, min(2A, P_avail)]. The dense
// subspace eigensolve picks the cheapest candidate; the other phases scale
// with more ranks and take the largest.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pwmini::planner {

enum class Phase { subspace_eig, hamiltonian, pseudopotential, repartition };

Phase parse_phase(const std::string& name);
std::string phase_name(Phase p);

// t(P) = a n^3 / P + b n^2 log2(P) + c P  (seconds), n the eigenproblem size.
// The defaults are order-of-magnitude values for one desk core: ~1 GFLOP/s
// dense work, a per-element message term and a fixed per-rank latency.
struct AnalyticCost {
  double n = 0.0;
  double a = 1e-9;
  double b = 5e-8;
  double c = 1e-4;

  double operator()(std::int64_t procs) const;
};

struct PlanInput {
  std::int64_t atoms = 1;
  std::int64_t p_min = 1;
  std::int64_t p_avail = 0;  // 0: no limit besides 2A
  Phase phase = Phase::subspace_eig;
  std::map<std::int64_t, double> cost_table;  // measured seconds by P
  std::optional<AnalyticCost> analytic;
};

struct Candidate {
  std::int64_t procs = 0;
  std::optional<double> cost;
};

struct PlanResult {
  bool feasible = false;
  std::int64_t p_opt = 0;
  std::vector<Candidate> candidates;
  std::string reason;  // set when infeasible
};

// {2^k : p_min <= 2^k <= min(2 * atoms, p_avail)}, ascending. Includes 1.
std::vector<std::int64_t> candidate_set(std::int64_t atoms, std::int64_t p_min, std::int64_t p_avail);

// With a cost table, only candidates that have a measured entry are priced;
// the analytic model prices the rest when given. Ties go to the smaller P.
PlanResult plan(const PlanInput& input);

// Per-rank memory estimate in bytes for a given process count.
using Estimator = std::function<double(std::int64_t)>;

// Smallest P in [1, p_max] with estimate(P) <= budget, by doubling then
// binary search. The estimator must be non-increasing in P. Throws
// InvalidArgument when even p_max does not fit.
std::int64_t min_processes(const Estimator& estimate, double budget_bytes, std::int64_t p_max);

// Per-rank footprint of the plane-wave state: wavefunction block, the
// repartition buffers (none with the in-place scheme) and the projector
// table (replicated or one shard).
struct PwMemoryModel {
  std::uint64_t grid_points = 0;
  std::uint64_t wavefunctions = 0;
  std::uint64_t atoms = 0;
  std::uint64_t entry_bytes = 0;
  bool in_place_repartition = true;
  bool distributed_pseudo = true;

  double operator()(std::int64_t procs) const;
};

// Parses a JSON plan request:
//   {"atoms": A, "p_min": P, "p_avail": P, "phase": "subspace_eig",
//    "cost_table": {"1024": 210.0, ...}, "analytic": {"n": .., "a": ..}}
// Errors carry the source name and line number.
PlanInput parse_plan_input(const std::string& text, const std::string& source = "<input>");

}  // namespace pwmini::planner
