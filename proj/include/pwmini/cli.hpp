#pragma once

// Command-line front end. `run` parses argv-style arguments (without the
// program name), executes one subcommand and returns the process exit code:
//
//   bench repartition --r R --c C --procs P --reps N
//   bench allreduce   --elems N --procs P --C C
//   bench pseudo      --atoms A --wfs N --procs P --window W
//   scf run           --config FILE --procs P
//   plan              --input FILE
//
// Every subcommand also takes --seed, --transport (inproc|socket), --out,
// --omit-timings and --threads. Reports are CSV with a versioned header
// comment; timing cells are left empty for failed checks or when timings
// are omitted.

#include <iosfwd>
#include <string>
#include <vector>

namespace pwmini::cli {

inline constexpr const char* kCsvVersion = "pwmini-csv v1";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pwmini::cli
