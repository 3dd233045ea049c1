#pragma once

#include "dsemkit/model_spec.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace dsemkit {

struct SamplerSettings {
  int chains = 4;
  long iterations = 10000;
  long burn_in = 5000;
  int thinning = 1;
  std::uint64_t seed = 1;

  long draws_per_chain() const { return (iterations - burn_in) / thinning; }
  bool operator==(const SamplerSettings&) const = default;
};

// Throws ParseError on invalid combinations.
void check_settings(const SamplerSettings& s);

struct ModelConfig {
  ModelSpec spec;
  SamplerSettings sampler;
  bool operator==(const ModelConfig&) const = default;
};

// JSON document with top-level keys `model`, `priors`, `states`, `sampler`.
// Errors are ParseError with a dotted key path, or "line N" for syntax.
ModelConfig parse_model_config(std::string_view text);
ModelConfig load_model_config(const std::string& path);

nlohmann::json config_to_json(const ModelConfig& config);
std::string serialize_config(const ModelConfig& config);

nlohmann::json prior_to_json(const DistributionParams& prior);
DistributionParams prior_from_json(const nlohmann::json& j, const std::string& path);

// 64-bit FNV-1a, used for spec and data fingerprints.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace dsemkit
