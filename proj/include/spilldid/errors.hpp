#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spilldid {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structural problem with panel input (duplicates, non-finite outcomes, bad columns).
class PanelError : public Error {
 public:
  using Error::Error;
};

/// One side of a moment cell has no contributing units.
class EmptyCell : public Error {
 public:
  using Error::Error;
};

/// Comparison odds weights sum to zero.
class DegenerateWeights : public Error {
 public:
  using Error::Error;
};

class DegenerateLabels : public Error {
 public:
  using Error::Error;
};

struct LogitFit {
  Eigen::VectorXd coefficients;  // intercept first
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
};

/// The logit hit the coefficient cap while the likelihood was still improving.
class SeparationDetected : public Error {
 public:
  SeparationDetected(const std::string& what, LogitFit capped)
      : Error(what), fit_(std::move(capped)) {}
  const LogitFit& capped_fit() const { return fit_; }

 private:
  LogitFit fit_;
};

class MissingLink : public Error {
 public:
  MissingLink(const std::string& what, int period) : Error(what), period_(period) {}
  int period() const { return period_; }

 private:
  int period_;
};

class SingularOmega : public Error {
 public:
  using Error::Error;
};

class DegenerateDraws : public Error {
 public:
  using Error::Error;
};

class MissingEffect : public Error {
 public:
  MissingEffect(const std::string& what, int cohort, int event_time)
      : Error(what), cohort_(cohort), event_time_(event_time) {}
  int cohort() const { return cohort_; }
  int event_time() const { return event_time_; }

 private:
  int cohort_;
  int event_time_;
};

class NoBalancedCohorts : public Error {
 public:
  using Error::Error;
};

class PreTreatmentQuery : public Error {
 public:
  using Error::Error;
};

/// CSV ingestion failure; carries the offending 1-based data row numbers when known.
class IngestError : public Error {
 public:
  IngestError(const std::string& what, std::vector<long> rows = {})
      : Error(what), rows_(std::move(rows)) {}
  const std::vector<long>& rows() const { return rows_; }

 private:
  std::vector<long> rows_;
};

}  // namespace spilldid
