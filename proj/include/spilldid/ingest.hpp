#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "spilldid/csv.hpp"
#include "spilldid/panel.hpp"

namespace spilldid {

struct ColumnMapping {
  std::string unit = "unit";
  std::string time = "time";
  std::string outcome = "y";
  std::string cohort = "cohort";
  // exactly one of these two may be set
  std::optional<std::string> spillover;  // ever-exposed flag, constant within unit
  std::optional<std::string> trading;    // per-period trading indicator
  std::optional<std::string> treated;    // optional per-period treatment indicator
  std::optional<std::string> cluster;    // cluster label, constant within unit
  std::vector<std::string> covariates;   // numeric
  std::vector<std::string> categorical;  // one-hot encoded, first level dropped
  std::map<std::string, std::string> cohort_map;  // raw cohort label -> label
  AbsorbingPolicy policy = AbsorbingPolicy::Strict;
};

struct IngestResult {
  PanelDataset panel;
  std::vector<std::string> covariates;  // encoded covariate names usable by the estimator
  std::vector<std::string> clusters;    // per unit (empty when no cluster column)
  std::vector<std::string> notes;
  std::vector<std::string> dropped_units;
  std::size_t rows = 0;
};

/// Long-format CSV -> panel. Row presence encodes observation; the cohort
/// column takes an integer period or empty/"never".
IngestResult ingest(const CsvTable& table, const ColumnMapping& mapping);
IngestResult ingest(const std::string& path, const ColumnMapping& mapping);

/// Parses "a=b,c=d" (also accepts ':' as separator) into a relabeling map.
std::map<std::string, std::string> parse_cohort_map(const std::string& spec);

/// Writes a panel in the long format ingest() reads: unit,time,y,cohort,trading
/// plus numeric covariates. Trading marks exposure from the onset on.
void write_panel_csv(const PanelDataset& ds, std::ostream& out);

}  // namespace spilldid
