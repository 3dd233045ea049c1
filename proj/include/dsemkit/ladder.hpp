#pragma once

#include "dsemkit/model_spec.hpp"

#include <optional>

namespace dsemkit {

// Constructors for the model ladder. Each returns a spec with default
// priors that passes validate_spec; invalid arguments throw ContractError.

ModelSpec build_cfa(int n_factors, int indicators_per_factor = 3);
ModelSpec build_ar1_observed();
ModelSpec build_ar1_latent(int n_indicators);
// n_indicators == 1 gives the observed-outcome variant.
ModelSpec build_two_level(int n_indicators, bool random_slope);
ModelSpec build_cross_classified(int n_indicators);
ModelSpec build_dsem(int n_indicators);

struct StateOptions {
  int n_states = 2;
  std::optional<double> p21_fixed;
  bool tie_state_variances = true;
};

// n_states == 1 reproduces build_dsem(n_indicators).
ModelSpec build_dlcsem_sudden_gain(int n_indicators, const StateOptions& opts = {});
ModelSpec build_dlcsem_fusion(bool swap_states, const StateOptions& opts = {});

// Dispatch on a builder call (config `model` section).
ModelSpec build_from_call(const BuilderCall& call, const StateOptions& opts);

// Anchored loading patterns: the first indicator of each factor has
// loading 1 and intercept 0.
MeasurementPattern single_factor_pattern(int n_indicators);
MeasurementPattern block_pattern(int n_factors, int indicators_per_factor);

}  // namespace dsemkit
