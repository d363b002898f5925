#include "pwmini/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "pwmini/collectives.hpp"
#include "pwmini/error.hpp"
#include "pwmini/layout.hpp"
#include "pwmini/minidft.hpp"
#include "pwmini/parallel.hpp"
#include "pwmini/planner.hpp"
#include "pwmini/pseudo.hpp"
#include "pwmini/transport.hpp"

namespace pwmini::cli {

namespace {

using Clock = std::chrono::steady_clock;
using cplx = std::complex<double>;
using transport::World;

struct Common {
  std::uint64_t seed = 1;
  std::string transport = "inproc";
  std::string out;
  bool omit_timings = false;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for every random input")->capture_default_str();
  cmd->add_option("--transport", c.transport, "Rank transport: inproc or socket")
      ->check(CLI::IsMember({"inproc", "socket"}))
      ->capture_default_str();
  cmd->add_option("--out", c.out, "Write the report to this file instead of stdout");
  cmd->add_flag("--omit-timings", c.omit_timings, "Leave timing cells empty (byte-stable output)");
  cmd->add_option("--threads", c.threads, "OpenMP threads per rank for the kernels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string sci(double v) { return fmt("%.12e", v); }

class Report {
 public:
  Report(const Common& c, std::ostream& fallback, const std::string& command)
      : omit_(c.omit_timings), fallback_(&fallback) {
    if (!c.out.empty()) {
      file_ = std::make_unique<std::ofstream>(c.out);
      if (!*file_) throw Error(c.out + ": cannot open for writing");
    }
    os() << "# " << kCsvVersion << ' ' << command << '\n';
  }

  std::ostream& os() { return file_ ? *file_ : *fallback_; }

  std::string timing(double seconds, bool ok) const { return omit_ || !ok ? "" : fmt("%.6e", seconds); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os() << (i ? "," : "") << cells[i];
    os() << '\n';
  }

 private:
  bool omit_;
  std::ostream* fallback_;
  std::unique_ptr<std::ofstream> file_;
};

transport::WorldOptions world_options(const Common& c, int procs) {
  if (procs < 1) throw InvalidArgument("--procs must be >= 1");
  transport::WorldOptions o;
  o.size = procs;
  o.backend = transport::parse_backend(c.transport);
  if (o.backend == transport::Backend::socket && !transport::socket_backend_available())
    throw InvalidArgument("socket transport is not available in this build");
  return o;
}

double max_over_ranks(const World& w, double v) {
  const auto all = collectives::allgatherv(w, std::span<const double>(&v, 1));
  return *std::max_element(all.begin(), all.end());
}

double sum_over_ranks(const World& w, double v) {
  const auto all = collectives::allgatherv(w, std::span<const double>(&v, 1));
  double s = 0.0;
  for (double x : all) s += x;
  return s;
}

bool all_ranks(const World& w, bool ok) { return max_over_ranks(w, ok ? 0.0 : 1.0) == 0.0; }

// ---------------------------------------------------------------------------

struct RepartitionArgs {
  std::size_t r = 64;
  std::size_t c = 16;
  int procs = 4;
  int reps = 3;
};

int bench_repartition(const Common& common, const RepartitionArgs& a, std::ostream& out) {
  if (a.r < 1 || a.c < 1 || a.reps < 1) throw InvalidArgument("--r, --c and --reps must be >= 1");
  Report rep(common, out, "bench repartition");
  rep.row({"variant", "r", "c", "procs", "reps", "seconds_per_rep", "peak_temp_bytes", "model_bytes", "verdict"});

  std::vector<double> global(a.r * a.c);
  std::mt19937_64 rng(common.seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : global) v = dist(rng);

  struct Row {
    std::string name;
    double seconds = 0.0;
    double peak = 0.0;
    bool ok = false;
  };
  std::vector<Row> rows(2);
  double model = 0.0;

  transport::run_world(world_options(common, a.procs), [&](World& w) {
    using M = layout::DistMatrix<double>;
    const M orig = M::from_global(w, layout::Layout::column_block, a.r, a.c, global);
    const M expect_row = M::from_global(w, layout::Layout::row_block, a.r, a.c, global);
    const double my_model =
        static_cast<double>(layout::buffer_cost_model(a.r, orig.local_cols()));
    const double model_max = max_over_ranks(w, my_model);

    for (int variant = 0; variant < 2; ++variant) {
      const bool in_place = variant == 0;
      w.ledger().reset_high_water();
      bool ok = true;
      w.barrier();
      const auto t0 = Clock::now();
      for (int k = 0; k < a.reps; ++k) {
        M row = in_place ? layout::col_to_row(orig) : layout::col_to_row_reference(orig);
        ok = ok && std::equal(row.local().begin(), row.local().end(), expect_row.local().begin(),
                              expect_row.local().end());
        M back = in_place ? layout::row_to_col(std::move(row)) : layout::row_to_col_reference(std::move(row));
        ok = ok && std::equal(back.local().begin(), back.local().end(), orig.local().begin(), orig.local().end());
      }
      w.barrier();
      const double secs = std::chrono::duration<double>(Clock::now() - t0).count() / a.reps;
      const double peak = max_over_ranks(w, static_cast<double>(w.ledger().snapshot().peak(memmon::Category::temporary)));
      const bool all_ok = all_ranks(w, ok);
      if (w.rank() == 0) {
        rows[static_cast<std::size_t>(variant)] = {in_place ? "in_place" : "reference", secs, peak, all_ok};
        model = model_max;
      }
    }
  });

  bool ok = true;
  for (const auto& r : rows) {
    rep.row({r.name, std::to_string(a.r), std::to_string(a.c), std::to_string(a.procs), std::to_string(a.reps),
             rep.timing(r.seconds, r.ok), fmt("%.0f", r.peak), fmt("%.0f", model), r.ok ? "OK" : "FAIL"});
    ok = ok && r.ok;
  }
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct AllreduceArgs {
  std::size_t elems = 1000;
  int procs = 8;
  int width = 4;
};

int bench_allreduce(const Common& common, const AllreduceArgs& a, std::ostream& out) {
  Report rep(common, out, "bench allreduce");
  rep.row({"P", "C", "n_elems", "stage1_s", "stage2_s", "stage3_s", "multistage_s", "baseline_s", "msgs", "bytes",
           "baseline_msgs", "baseline_bytes", "max_rel_err", "verdict"});
  if (a.width < 1 || a.width > a.procs) throw InvalidArgument("--C must lie in [1, procs]");

  const auto p = static_cast<std::size_t>(a.procs);
  std::vector<double> inputs(p * a.elems);
  std::mt19937_64 rng(common.seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : inputs) v = dist(rng);
  std::vector<double> oracle(a.elems, 0.0);
  for (std::size_t q = 0; q < p; ++q)
    for (std::size_t i = 0; i < a.elems; ++i) oracle[i] += inputs[q * a.elems + i];
  double scale = 0.0;
  for (double v : oracle) scale = std::max(scale, std::abs(v));
  scale = std::max(scale, 1e-300);

  std::array<double, 3> stage{};
  double multi_s = 0, base_s = 0, msgs = 0, bytes = 0, bmsgs = 0, bbytes = 0, err = 0;
  bool ok = false;

  transport::run_world(world_options(common, a.procs), [&](World& w) {
    const auto me = static_cast<std::size_t>(w.rank());
    const std::span<const double> mine(inputs.data() + me * a.elems, a.elems);
    const collectives::ReduceGrid grid(a.procs, a.width);

    std::vector<double> data(mine.begin(), mine.end());
    auto c0 = w.counters();
    w.barrier();
    auto t0 = Clock::now();
    const auto stats = collectives::multistage_allreduce(w, grid, data);
    const double t_multi = std::chrono::duration<double>(Clock::now() - t0).count();
    const auto traffic = w.counters() - c0;

    std::vector<double> base(mine.begin(), mine.end());
    c0 = w.counters();
    w.barrier();
    t0 = Clock::now();
    collectives::baseline_allreduce(w, base);
    const double t_base = std::chrono::duration<double>(Clock::now() - t0).count();
    const auto btraffic = w.counters() - c0;

    double my_err = 0.0;
    for (std::size_t i = 0; i < a.elems; ++i)
      my_err = std::max({my_err, std::abs(data[i] - oracle[i]) / scale, std::abs(base[i] - oracle[i]) / scale});

    std::array<double, 3> st{};
    for (int s = 0; s < 3; ++s) st[static_cast<std::size_t>(s)] = max_over_ranks(w, stats.stage[static_cast<std::size_t>(s)].seconds);
    const double tm = max_over_ranks(w, t_multi), tb = max_over_ranks(w, t_base);
    const double m = sum_over_ranks(w, static_cast<double>(traffic.msgs_sent));
    const double b = sum_over_ranks(w, static_cast<double>(traffic.bytes_sent));
    const double bm = sum_over_ranks(w, static_cast<double>(btraffic.msgs_sent));
    const double bb = sum_over_ranks(w, static_cast<double>(btraffic.bytes_sent));
    const double e = max_over_ranks(w, my_err);
    if (w.rank() == 0) {
      stage = st;
      multi_s = tm;
      base_s = tb;
      msgs = m;
      bytes = b;
      bmsgs = bm;
      bbytes = bb;
      err = e;
      ok = e <= 1e-12;
    }
  });

  rep.row({std::to_string(a.procs), std::to_string(a.width), std::to_string(a.elems), rep.timing(stage[0], ok),
           rep.timing(stage[1], ok), rep.timing(stage[2], ok), rep.timing(multi_s, ok), rep.timing(base_s, ok),
           fmt("%.0f", msgs), fmt("%.0f", bytes), fmt("%.0f", bmsgs), fmt("%.0f", bbytes), fmt("%.3e", err),
           ok ? "OK" : "FAIL"});
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct PseudoArgs {
  std::size_t atoms = 16;
  std::size_t wfs = 8;
  int procs = 4;
  int window = 2;
  int grid = 12;
};

int bench_pseudo(const Common& common, const PseudoArgs& a, std::ostream& out) {
  if (a.atoms < 1 || a.wfs < 1 || a.grid < 1) throw InvalidArgument("--atoms, --wfs and --grid must be >= 1");
  if (a.window < 1) throw InvalidArgument("--window must be >= 1");
  Report rep(common, out, "bench pseudo");
  rep.row({"variant", "atoms", "wfs", "procs", "window", "seconds", "pseudo_bytes_per_rank", "model_bytes",
           "shard_bytes_sent", "verdict"});

  RealSpaceGrid grid{{a.grid, a.grid, a.grid}, {10.0, 10.0, 10.0}};
  pseudo::KindRecord kind;
  kind.atomic_number = 14;
  kind.symbol = "Si";
  kind.projector_sigma = 0.9;
  kind.weights = {0.5, -0.2, 0.1, 0.05};

  std::mt19937_64 rng(common.seed);
  std::uniform_real_distribution<double> pos(0.0, 10.0), amp(-1.0, 1.0);
  std::vector<pseudo::PseudoEntry> entries;
  for (std::size_t i = 0; i < a.atoms; ++i) {
    const std::array<double, 3> r{pos(rng), pos(rng), pos(rng)};
    entries.push_back(pseudo::synthetic_entry(i, kind, r, grid));
  }
  const std::size_t npts = grid.points();
  std::vector<cplx> global(npts * a.wfs);
  for (auto& v : global) {
    const double re = amp(rng);
    v = {re, amp(rng)};
  }
  const std::uint64_t entry_bytes = entries.front().record_bytes();
  const auto model = pseudo::pseudo_memory_report(a.atoms, entry_bytes, static_cast<std::uint64_t>(a.procs));

  struct Row {
    double seconds = 0, bytes = 0, sent = 0;
  };
  Row ref_row, dist_row;
  bool ok = false;
  double err = 0.0;

  transport::run_world(world_options(common, a.procs), [&](World& w) {
    const double dv = grid.dv();
    const auto wf = pseudo::WaveMatrix::from_global(w, layout::Layout::column_block, npts, a.wfs, global);
    auto& ledger = w.ledger();

    ledger.reset_high_water();
    w.barrier();
    auto t0 = Clock::now();
    pseudo::WaveMatrix ref = [&] {
      memmon::ScopedRecord rec(&ledger, "pseudo.replicated", memmon::Category::dft_data,
                               static_cast<std::int64_t>(a.atoms * entry_bytes));
      return pseudo::apply_vnl_reference(wf, entries, dv);
    }();
    w.barrier();
    const double t_ref = std::chrono::duration<double>(Clock::now() - t0).count();
    const double ref_bytes = static_cast<double>(ledger.snapshot().peak(memmon::Category::dft_data));

    const pseudo::AtomShard shard = pseudo::make_shard(w.rank(), w.size(), entries);
    ledger.reset_high_water();
    pseudo::VnlStats stats;
    w.barrier();
    t0 = Clock::now();
    pseudo::WaveMatrix dist = [&] {
      memmon::ScopedRecord rec(&ledger, "pseudo.shard", memmon::Category::dft_data,
                               static_cast<std::int64_t>(shard.bytes()));
      return pseudo::apply_vnl_distributed(wf, shard, a.window, dv, &stats);
    }();
    w.barrier();
    const double t_dist = std::chrono::duration<double>(Clock::now() - t0).count();
    const double dist_bytes = static_cast<double>(ledger.snapshot().peak(memmon::Category::dft_data));

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ref.local().size(); ++i) {
      num = std::max(num, std::abs(dist.local()[i] - ref.local()[i]));
      den = std::max(den, std::abs(ref.local()[i]));
    }
    const double my_err = den > 0.0 ? num / den : num;
    // Each rank forwards every shard except the last one it sees, which
    // originated at its predecessor.
    const auto prev_owner = (w.rank() + w.size() - 1) % w.size();
    const std::size_t expect_atoms =
        w.size() == 1 ? 0 : a.atoms - pseudo::make_shard(prev_owner, w.size(), entries).size();
    const bool my_ok = my_err <= 1e-12 && stats.shard_messages == (w.size() - 1) && stats.atoms_sent == expect_atoms;

    const double tr = max_over_ranks(w, t_ref), td = max_over_ranks(w, t_dist);
    const double rb = max_over_ranks(w, ref_bytes), db = max_over_ranks(w, dist_bytes);
    const double sent = max_over_ranks(w, static_cast<double>(stats.shard_bytes_sent));
    const double e = max_over_ranks(w, my_err);
    const bool all_ok = all_ranks(w, my_ok);
    if (w.rank() == 0) {
      ref_row = {tr, rb, 0.0};
      dist_row = {td, db, sent};
      ok = all_ok;
      err = e;
    }
  });

  rep.row({"replicated", std::to_string(a.atoms), std::to_string(a.wfs), std::to_string(a.procs),
           std::to_string(a.window), rep.timing(ref_row.seconds, ok), fmt("%.0f", ref_row.bytes),
           std::to_string(model.replicated_bytes), "0", ok ? "OK" : "FAIL"});
  rep.row({"distributed", std::to_string(a.atoms), std::to_string(a.wfs), std::to_string(a.procs),
           std::to_string(a.window), rep.timing(dist_row.seconds, ok), fmt("%.0f", dist_row.bytes),
           std::to_string(model.distributed_bytes), fmt("%.0f", dist_row.sent), ok ? "OK" : "FAIL"});
  rep.os() << "# max_rel_err=" << fmt("%.3e", err) << '\n';
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

int scf_run(const Common& common, const std::string& config, int procs, bool seed_given, std::ostream& out,
            std::ostream& err) {
  dft::SystemConfig cfg = dft::load_system_config(config);
  if (seed_given) cfg.solver.seed = common.seed;
  Report rep(common, out, "scf run");

  dft::ScfResult result;
  transport::run_world(world_options(common, procs), [&](World& w) {
    auto r = dft::scf_run(w, cfg);
    if (w.rank() == 0) result = std::move(r);
  });

  std::vector<std::string> head{"iter", "density_residual", "potential_residual", "charge", "max_eig_residual",
                                "orthonormality", "e_band", "e_hartree", "e_total"};
  for (int j = 0; j < cfg.solver.n_wf; ++j) head.push_back("lambda_" + std::to_string(j));
  for (const char* t : {"t_hamiltonian_s", "t_repartition_s", "t_allreduce_s", "t_rayleigh_ritz_s"}) head.push_back(t);
  head.push_back("verdict");
  rep.row(head);

  bool all_ok = true;
  for (const auto& h : result.history) {
    const bool ok = std::abs(h.charge - cfg.electrons) <= 1e-8 && h.orthonormality <= 1e-10;
    all_ok = all_ok && ok;
    std::vector<std::string> row{std::to_string(h.iter), sci(h.density_residual), sci(h.potential_residual),
                                 sci(h.charge), sci(h.max_eig_residual), fmt("%.3e", h.orthonormality),
                                 sci(h.e_band), sci(h.e_hartree), sci(h.e_total)};
    for (double l : h.eigenvalues) row.push_back(sci(l));
    row.push_back(rep.timing(h.timings.hamiltonian, ok));
    row.push_back(rep.timing(h.timings.repartition, ok));
    row.push_back(rep.timing(h.timings.allreduce, ok));
    row.push_back(rep.timing(h.timings.rayleigh_ritz, ok));
    row.push_back(ok ? "OK" : "FAIL");
    rep.row(row);
  }
  rep.os() << "# converged=" << (result.converged ? "yes" : "no") << " iterations=" << result.iterations
           << " procs=" << procs << " eig_procs=" << result.eig_procs << " allreduce_width=" << result.allreduce_width
           << " grid=" << cfg.grid.n[0] << 'x' << cfg.grid.n[1] << 'x' << cfg.grid.n[2]
           << " e_total=" << sci(result.e_total) << '\n';
  if (!result.converged) {
    err << "error: SCF did not converge within " << cfg.solver.max_iter << " iterations\n";
    return 1;
  }
  if (!all_ok) {
    err << "error: charge or orthonormality check failed\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------

int plan_cmd(const Common& common, const std::string& input, std::ostream& out, std::ostream& err) {
  std::ifstream in(input);
  if (!in) throw InvalidArgument(input + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  const planner::PlanInput pin = planner::parse_plan_input(ss.str(), input);
  const planner::PlanResult res = planner::plan(pin);

  Report rep(common, out, "plan");
  rep.row({"procs", "seconds", "status"});
  std::map<std::int64_t, std::string> status;
  std::map<std::int64_t, std::optional<double>> cost;
  for (const auto& [p, s] : pin.cost_table) {
    cost[p] = s;
    status[p] = (p & (p - 1)) != 0 ? "excluded_not_power_of_two" : "out_of_range";
  }
  for (const auto& c : res.candidates) {
    cost[c.procs] = c.cost;
    status[c.procs] = c.procs == res.p_opt && res.feasible ? "chosen" : "candidate";
  }
  for (const auto& [p, s] : status) rep.row({std::to_string(p), cost[p] ? fmt("%.6g", *cost[p]) : "", s});
  if (!res.feasible) {
    rep.os() << "# phase=" << planner::phase_name(pin.phase) << " infeasible: " << res.reason << '\n';
    err << "error: infeasible plan: " << res.reason << '\n';
    return 1;
  }
  rep.os() << "# phase=" << planner::phase_name(pin.phase) << " p_opt=" << res.p_opt << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Plane-wave DFT communication and memory kernels", "pwmini"};
  app.require_subcommand(1);

  Common common;
  RepartitionArgs rep_args;
  AllreduceArgs ar_args;
  PseudoArgs ps_args;
  std::string config, plan_input;
  int scf_procs = 1;

  auto* bench = app.add_subcommand("bench", "Kernel benchmarks with oracle checks");
  bench->require_subcommand(1);
  auto* b_rep = bench->add_subcommand("repartition", "In-place vs mapping-matrix column/row switch");
  b_rep->add_option("--r", rep_args.r, "Rows")->required();
  b_rep->add_option("--c", rep_args.c, "Columns")->required();
  b_rep->add_option("--procs", rep_args.procs, "Ranks")->required()->check(CLI::PositiveNumber);
  b_rep->add_option("--reps", rep_args.reps, "Repetitions")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(b_rep, common);

  auto* b_ar = bench->add_subcommand("allreduce", "Multistage vs recursive-doubling allreduce");
  b_ar->add_option("--elems", ar_args.elems, "Vector length")->required();
  b_ar->add_option("--procs", ar_args.procs, "Ranks")->required()->check(CLI::PositiveNumber);
  b_ar->add_option("--C", ar_args.width, "Row-domain width")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(b_ar, common);

  auto* b_ps = bench->add_subcommand("pseudo", "Distributed ring vs replicated nonlocal pseudopotential");
  b_ps->add_option("--atoms", ps_args.atoms, "Atoms")->required();
  b_ps->add_option("--wfs", ps_args.wfs, "Wavefunctions")->required();
  b_ps->add_option("--procs", ps_args.procs, "Ranks")->required()->check(CLI::PositiveNumber);
  b_ps->add_option("--window", ps_args.window, "Prefetch depth")->capture_default_str()->check(CLI::PositiveNumber);
  b_ps->add_option("--grid", ps_args.grid, "Grid points per axis")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(b_ps, common);

  auto* scf = app.add_subcommand("scf", "Self-consistent field solver");
  scf->require_subcommand(1);
  auto* scf_run_cmd = scf->add_subcommand("run", "Run the SCF loop on a JSON system definition");
  scf_run_cmd->add_option("--config", config, "System JSON")->required();
  scf_run_cmd->add_option("--procs", scf_procs, "Ranks")->capture_default_str()->check(CLI::PositiveNumber);
  add_common(scf_run_cmd, common);

  auto* plan = app.add_subcommand("plan", "Pick a process count from a plan request");
  plan->add_option("--input", plan_input, "Plan request JSON")->required();
  add_common(plan, common);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    set_kernel_threads(common.threads);
    if (*b_rep) return bench_repartition(common, rep_args, out);
    if (*b_ar) return bench_allreduce(common, ar_args, out);
    if (*b_ps) return bench_pseudo(common, ps_args, out);
    if (*scf_run_cmd) {
      const bool seed_given = scf_run_cmd->count("--seed") > 0;
      return scf_run(common, config, scf_procs, seed_given, out, err);
    }
    if (*plan) return plan_cmd(common, plan_input, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace pwmini::cli
