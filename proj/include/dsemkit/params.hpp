#pragma once

#include "dsemkit/model_spec.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace dsemkit {

// Structured parameter values in precision form. Loading matrices and
// intercept vectors are complete (fixed cells included).
struct ModelParams {
  std::vector<Eigen::MatrixXd> lambda;     // per measurement set, J x K
  std::vector<Eigen::VectorXd> nu;         // per measurement set
  std::vector<Eigen::VectorXd> psi_y;      // per residual set
  std::vector<Eigen::VectorXd> alpha;      // per state (mu_eta for factor models)
  std::vector<Eigen::VectorXd> beta;       // per state, diagonal AR coefficients
  std::vector<Eigen::MatrixXd> psi_eta;    // per variance set; observed models: outcome precision
  std::vector<Eigen::MatrixXd> psi_zeta2;  // per random-effect group
  double psi_zeta3 = 1.0;
  double delta = 0.0;
  double b21 = 0.0;
  Eigen::VectorXd b22;
  double p21 = 0.0;
};

int group_factors(const ModelSpec& spec, int group);
int group_dim(const ModelSpec& spec, int group);

// Correctly sized values: fixed pattern cells set, precisions identity,
// everything else zero.
ModelParams shaped_params(const ModelSpec& spec);

// Sets alpha of state 2 from the delta constraint (no-op otherwise).
void apply_constraints(const ModelSpec& spec, ModelParams& p);

// Storage-scale flattening in compiled-index order.
void flatten(const CompiledIndex& index, const ModelParams& p, double* out);
std::vector<double> flatten(const CompiledIndex& index, const ModelParams& p);
void unflatten(const ModelSpec& spec, const CompiledIndex& index, const double* row, ModelParams& p);

// Report-scale value of one block as a dense matrix (vector blocks as a
// column, symmetric blocks in full).
Eigen::MatrixXd report_value(const BlockInfo& block, const ModelParams& p);

struct TruthParseResult {
  ModelParams params;
  std::vector<std::string> warnings;  // values outside prior support
};

// True values keyed by report name on the variance scale. Throws
// ParseError("params.<name>", ...) for missing or malformed blocks.
TruthParseResult parse_truth(const ModelSpec& spec, const nlohmann::json& params);
nlohmann::json truth_to_json(const ModelSpec& spec, const ModelParams& p);

}  // namespace dsemkit
