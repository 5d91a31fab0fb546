#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "spilldid/effects.hpp"
#include "spilldid/ingest.hpp"
#include "spilldid/inference.hpp"

namespace spilldid {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitInfeasible = 3,
};

struct RunConfig {
  std::string input;
  ColumnMapping mapping;
  EstimationConfig estimation;
  BootstrapConfig bootstrap;
  bool run_bootstrap = true;
  std::vector<int> event_times;  // empty = default trimming
  std::vector<int> balanced;     // e' values for balanced event studies
  std::string output_dir = ".";
  bool write_draws = false;
};

/// validate subcommand: ingest + validation report on `log`, run_meta.json.
int run_validate(const RunConfig& cfg, std::ostream& log);

/// estimate subcommand: writes gt_effects.csv, aggregates.json,
/// plotdata_<target>.csv, run_meta.json (and bootstrap_draws.csv on request).
int run_estimate(const RunConfig& cfg, std::ostream& log);

/// aggregate subcommand: re-aggregates gt_effects.csv from `input_dir`
/// (using bootstrap_draws.csv there when present) into `cfg.output_dir`.
int run_aggregate(const std::string& input_dir, const RunConfig& cfg, std::ostream& log);

}  // namespace spilldid
