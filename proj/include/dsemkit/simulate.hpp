#pragma once

#include "dsemkit/dataset.hpp"
#include "dsemkit/model_spec.hpp"
#include "dsemkit/params.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dsemkit {

struct SimOutput {
  Dataset data;
  // Latent truth in the sampler's layouts (see ChainState).
  std::vector<std::vector<double>> eta;
  std::vector<std::vector<double>> effects;
  std::vector<double> time_effects;
  std::vector<std::uint8_t> states;  // 0-based
  std::vector<std::string> warnings;  // e.g. nonstationary person slopes
};

struct SimOptions {
  int n_patients = 1;
  int n_times = 1;
  std::uint64_t seed = 1;
  double missing_rate = 0.0;
  // 0-based states per (i, t) used instead of the transition model.
  std::optional<std::vector<std::uint8_t>> fixed_states;
};

// Ancestral sampling: person and time effects, then per time point the
// state and every state's latent process, then indicators and an MCAR mask.
SimOutput simulate(const ModelSpec& spec, const ModelParams& truth, const SimOptions& opts);

struct IndicatorMoments {
  std::vector<double> mean;
  std::vector<double> variance;
  double factor_variance = 0.0;  // stationary within variance of factor 1
};

// Stationary moments of the state-1 process (person intercept variance
// included). Throws ContractError when |beta| >= 1.
IndicatorMoments stationary_moments(const ModelSpec& spec, const ModelParams& truth);

// Parameters and latent truth for the truth.json sidecar.
nlohmann::json sim_truth_json(const ModelSpec& spec, const ModelParams& truth, const SimOutput& out);

}  // namespace dsemkit
