#include "pwmini/planner.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "pwmini/error.hpp"
#include "pwmini/layout.hpp"
#include "pwmini/pseudo.hpp"

namespace pwmini::planner {

Phase parse_phase(const std::string& name) {
  if (name == "subspace_eig") return Phase::subspace_eig;
  if (name == "hamiltonian") return Phase::hamiltonian;
  if (name == "pseudopotential") return Phase::pseudopotential;
  if (name == "repartition") return Phase::repartition;
  throw InvalidArgument("unknown phase \"" + name + "\"");
}

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::subspace_eig:
      return "subspace_eig";
    case Phase::hamiltonian:
      return "hamiltonian";
    case Phase::pseudopotential:
      return "pseudopotential";
    case Phase::repartition:
      return "repartition";
  }
  return "?";
}

double AnalyticCost::operator()(std::int64_t procs) const {
  if (procs < 1) throw InvalidArgument("process count must be >= 1");
  const double p = static_cast<double>(procs);
  return a * n * n * n / p + b * n * n * std::log2(p) + c * p;
}

std::vector<std::int64_t> candidate_set(std::int64_t atoms, std::int64_t p_min, std::int64_t p_avail) {
  if (atoms < 1) throw InvalidArgument("atom count must be >= 1");
  if (p_min < 1) throw InvalidArgument("P_min must be >= 1");
  std::int64_t hi = 2 * atoms;
  if (p_avail > 0) hi = std::min(hi, p_avail);
  std::vector<std::int64_t> out;
  for (std::int64_t p = 1; p <= hi; p *= 2)
    if (p >= p_min) out.push_back(p);
  return out;
}

PlanResult plan(const PlanInput& input) {
  PlanResult r;
  const auto procs = candidate_set(input.atoms, input.p_min, input.p_avail);
  for (std::int64_t p : procs) {
    Candidate c{p, std::nullopt};
    if (auto it = input.cost_table.find(p); it != input.cost_table.end()) {
      c.cost = it->second;
    } else if (input.analytic) {
      c.cost = (*input.analytic)(p);
    }
    r.candidates.push_back(c);
  }
  if (procs.empty()) {
    r.reason = "no power of two in [" + std::to_string(input.p_min) + ", " +
               std::to_string(input.p_avail > 0 ? std::min(2 * input.atoms, input.p_avail) : 2 * input.atoms) + "]";
    return r;
  }
  if (input.phase != Phase::subspace_eig) {
    r.feasible = true;
    r.p_opt = procs.back();
    return r;
  }
  std::optional<double> best;
  for (const auto& c : r.candidates) {
    if (!c.cost) continue;
    if (!best || *c.cost < *best) {
      best = c.cost;
      r.p_opt = c.procs;
    }
  }
  if (!best) {
    r.reason = "no candidate has a cost (table entries missing and no analytic model)";
    return r;
  }
  r.feasible = true;
  return r;
}

std::int64_t min_processes(const Estimator& estimate, double budget_bytes, std::int64_t p_max) {
  if (p_max < 1) throw InvalidArgument("p_max must be >= 1");
  std::int64_t hi = 1;
  while (hi < p_max && estimate(hi) > budget_bytes) hi = std::min(hi * 2, p_max);
  if (estimate(hi) > budget_bytes)
    throw InvalidArgument("no process count up to " + std::to_string(p_max) + " fits the memory budget");
  // estimate(hi) fits and estimate(lo) does not (or lo == 0).
  std::int64_t lo = hi / 2;
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (estimate(mid) <= budget_bytes) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

double PwMemoryModel::operator()(std::int64_t procs) const {
  if (procs < 1) throw InvalidArgument("process count must be >= 1");
  const auto p = static_cast<std::uint64_t>(procs);
  const std::uint64_t cols = (wavefunctions + p - 1) / p;
  double bytes = 16.0 * static_cast<double>(grid_points) * static_cast<double>(cols);
  if (!in_place_repartition) bytes += static_cast<double>(layout::buffer_cost_model(grid_points, cols));
  const auto mem = pseudo::pseudo_memory_report(std::max<std::uint64_t>(atoms, 1), entry_bytes, p);
  bytes += static_cast<double>(distributed_pseudo ? mem.distributed_bytes : mem.replicated_bytes);
  return bytes;
}

PlanInput parse_plan_input(const std::string& text, const std::string& source) {
  detail::JsonDoc doc(text, source);
  const auto& root = doc.root();
  doc.reject_unknown(root, {"atoms", "p_min", "p_avail", "phase", "cost_table", "analytic"});
  PlanInput in;
  in.atoms = doc.integer(doc.require(root, "atoms"), "atoms");
  if (in.atoms < 1) doc.fail("atoms", "\"atoms\" must be >= 1");
  doc.optional(root, "p_min", [&](const auto& v) { in.p_min = doc.integer(v, "p_min"); });
  if (in.p_min < 1) doc.fail("p_min", "\"p_min\" must be >= 1");
  doc.optional(root, "p_avail", [&](const auto& v) { in.p_avail = doc.integer(v, "p_avail"); });
  if (in.p_avail < 0) doc.fail("p_avail", "\"p_avail\" must be >= 0");
  doc.optional(root, "phase", [&](const auto& v) {
    try {
      in.phase = parse_phase(doc.string(v, "phase"));
    } catch (const InvalidArgument& e) {
      doc.fail("phase", e.what());
    }
  });
  doc.optional(root, "cost_table", [&](const auto& v) {
    if (!v.is_object()) doc.fail("cost_table", "\"cost_table\" must map process counts to seconds");
    for (auto it = v.begin(); it != v.end(); ++it) {
      std::int64_t p = 0;
      std::size_t used = 0;
      try {
        p = std::stoll(it.key(), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != it.key().size() || p < 1) doc.fail(it.key(), "cost_table key \"" + it.key() + "\" is not a process count");
      in.cost_table[p] = doc.number(it.value(), it.key());
    }
  });
  doc.optional(root, "analytic", [&](const auto& v) {
    if (!v.is_object()) doc.fail("analytic", "\"analytic\" must be an object");
    doc.reject_unknown(v, {"n", "a", "b", "c"});
    AnalyticCost c;
    c.n = doc.number(doc.require(v, "n"), "n");
    doc.optional(v, "a", [&](const auto& x) { c.a = doc.number(x, "a"); });
    doc.optional(v, "b", [&](const auto& x) { c.b = doc.number(x, "b"); });
    doc.optional(v, "c", [&](const auto& x) { c.c = doc.number(x, "c"); });
    in.analytic = c;
  });
  return in;
}

}  // namespace pwmini::planner
