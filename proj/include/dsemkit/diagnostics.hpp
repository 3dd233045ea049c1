#pragma once

#include "dsemkit/sampler.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dsemkit {

struct DiagnosticValue {
  double value = 1.0;
  bool degenerate = false;  // zero variance within every chain
};

// Split-chain potential scale reduction. Needs >= 4 draws per chain.
DiagnosticValue compute_rhat(const std::vector<std::vector<double>>& chains);

// Multi-chain effective sample size with Geyer's initial positive sequence,
// capped at the total draw count. Needs >= 8 draws in total.
DiagnosticValue compute_ess(const std::vector<std::vector<double>>& chains);
DiagnosticValue compute_ess(const std::vector<double>& draws);

// Type-7 empirical quantile of unsorted values.
double quantile7(std::vector<double> values, double p);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double rhat = 1.0;
  double ess = 0.0;
  bool degenerate = false;
};

// Per-chain series of one derived quantity.
using ChainSeries = std::vector<std::vector<double>>;

ParameterSummary summarize_series(const std::string& name, const ChainSeries& series);

// One row per report column; precision blocks are summarized on the
// variance scale (reciprocal or matrix inverse per draw).
std::vector<ParameterSummary> summarize(const DrawStore& store, const ModelSpec& spec);

// Report-scale series for every report column, in index order.
std::vector<ChainSeries> report_series(const DrawStore& store, const ModelSpec& spec);

// Completely standardized loadings per draw:
//   lambda * sd(eta) / sqrt(lambda^2 var(eta) + sigma2_y)
// with var(eta) the model-implied total factor variance (stationary within
// variance plus person intercept variance).
double standardized_loading(double lambda, double factor_variance, double residual_variance);
struct StandardizedSeries {
  std::vector<std::string> names;
  std::vector<ChainSeries> series;
};
StandardizedSeries standardized_loadings(const DrawStore& store, const ModelSpec& spec);
std::vector<ParameterSummary> standardize_loadings(const DrawStore& store, const ModelSpec& spec);

std::string summary_csv(const std::vector<ParameterSummary>& rows);
nlohmann::json summary_json(const std::vector<ParameterSummary>& rows);

// Parameters with R-hat above the threshold.
std::vector<std::string> convergence_flags(const std::vector<ParameterSummary>& rows,
                                           double threshold = 1.1);

struct StateReport {
  int n_patients = 0;
  int n_times = 0;
  std::vector<double> p_state2;        // (i, t)
  std::vector<int> mode;               // (i, t), 1-based
  std::vector<double> p_transition;    // (i, t), posterior mean transition probability
  std::vector<std::optional<int>> switch_time;  // per patient, 0-based time index
  std::vector<double> switch_fraction;  // per time, share of patients with modal state 2
  std::vector<double> mean_transition;  // per time, averaged over patients
};

// Throws ContractError for single-state fits.
StateReport state_report(const DrawStore& store);

std::string state_probs_csv(const StateReport& r, const DrawStore& store);
std::string switch_times_csv(const StateReport& r, const DrawStore& store);
std::string switch_fraction_csv(const StateReport& r, const DrawStore& store);
std::string transition_probs_csv(const StateReport& r, const DrawStore& store);

}  // namespace dsemkit
