#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "refdrop/config.hpp"
#include "refdrop/io.hpp"

namespace refdrop::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitUsage = 2,
  kExitIo = 3,
};

/// Suite options for `check`: seed, grid, precision and threshold from the
/// config; the fault hook adds 0.1 to one coefficient entry.
oracle::SuiteOptions suite_options(const RunConfig& config);

/// Runs the equivalence suite with the configured seed, grid and precision.
/// Writes the report to check.report_path ("-" for stdout), defaulting to
/// <output_dir>/equivalence_report.json.
int cmd_check(const RunConfig& config, std::ostream& out, std::ostream& err);

/// One rfg run per sweep coefficient (single reference, same seeds) and the
/// distance of every guided sample to the reference at every step.
std::vector<io::SweepRow> run_sweep(const RunConfig& config);

/// Writes <output_dir>/sweep.csv.
int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Writes sample_<i>.<dtype> (+ sidecar), sample_<i>.pgm and
/// resolved_config.json into output_dir.
int cmd_generate(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Writes <output_dir>/bench_report.json.
int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Dispatches by name and maps exceptions to exit codes: configuration and
/// argument errors to kExitUsage, file-system errors to kExitIo.
int run_command(const std::string& name, const RunConfig& config, std::ostream& out,
                std::ostream& err);

}  // namespace refdrop::cli
