#pragma once

#include "dsemkit/config.hpp"
#include "dsemkit/dataset.hpp"
#include "dsemkit/model_spec.hpp"
#include "dsemkit/params.hpp"
#include "dsemkit/rng.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dsemkit {

// Blocks of one sweep; a test can hold any of them fixed.
struct UpdatePlan {
  bool impute = true;
  bool factors = true;
  bool measurement = true;
  bool structural = true;
  bool covariances = true;
  bool states = true;
  bool transition = true;
};

// Adaptive random-walk Metropolis bookkeeping for one scalar.
struct AdaptiveStep {
  double scale = 0.5;
  long accepted = 0;
  long proposed = 0;
  long accepted_after_burnin = 0;
  long proposed_after_burnin = 0;
  double rate() const;
};

struct ChainState {
  ModelParams params;
  // Latent process of each state, laid out ((i * T) + t) * K + k.
  std::vector<std::vector<double>> eta;
  // Person effects per group, laid out i * dim + d (intercepts, then slope).
  std::vector<std::vector<double>> effects;
  std::vector<double> time_effects;  // per time point
  std::vector<std::uint8_t> states;  // 0-based state per (i, t)
  std::vector<double> y;             // data with masked cells imputed
  AdaptiveStep b21_step;
  std::vector<AdaptiveStep> b22_step;
  AdaptiveStep factor_mh;  // independence steps for transition-coupled factors
  AdaptiveStep variance_mh;  // correction for the hierarchical delta prior
  long iteration = 0;
  bool adapting = true;
  std::vector<RandomStream> streams;  // one per update block
};

// Immutable per-fit context shared by all chains.
class Model {
 public:
  Model(ModelSpec spec, Dataset data);

  const ModelSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }
  const CompiledIndex& index() const { return index_; }
  int N() const { return data_.n_patients; }
  int T() const { return data_.n_times; }
  int J() const { return data_.n_indicators; }
  int S() const { return spec_.n_states(); }
  int K(int s) const { return spec_.processes[s].n_factors; }
  // Observed indicator means, used for initialization.
  const std::vector<double>& indicator_means() const { return means_; }

 private:
  ModelSpec spec_;
  Dataset data_;
  CompiledIndex index_;
  std::vector<double> means_;
};

ChainState init_chain(const Model& model, std::uint64_t seed);

void impute_missing(const Model& model, ChainState& st);
void update_latent_factors(const Model& model, ChainState& st);
void update_measurement(const Model& model, ChainState& st);
void update_structural(const Model& model, ChainState& st);
void update_covariances(const Model& model, ChainState& st);
void update_states(const Model& model, ChainState& st);
void update_transition_params(const Model& model, ChainState& st);

// One full scan in the fixed block order; throws SamplerError on NaN.
void gibbs_sweep(const Model& model, ChainState& st, const UpdatePlan& plan = {});

// Probability of being in state 2 at (i, t) given the previous state and
// the current parameters; 0 at t = 0 and for single-state models.
double transition_to_state2(const Model& model, const ChainState& st, int i, int t);

struct ChainDraws {
  std::uint64_t seed = 0;
  std::vector<double> draws;          // n_draws x n_columns, row-major
  std::vector<std::uint8_t> states;   // n_draws x (N * T), 1-based labels
  std::vector<double> transition_sum; // N * T, summed over draws
  std::map<std::string, double> acceptance;
  double seconds = 0.0;
};

struct DrawStore {
  std::vector<std::string> columns;
  long n_draws = 0;  // per chain
  std::vector<ChainDraws> chains;
  // Manifest fields.
  std::uint64_t seed = 0;
  std::string spec_hash;
  std::string data_hash;
  long iterations = 0;
  long burn_in = 0;
  int thinning = 1;
  int n_patients = 0;
  int n_times = 0;
  int n_indicators = 0;
  int n_states = 1;
  std::string version;
  std::string config;  // serialized config the fit ran with
  std::vector<std::string> patient_ids;
  std::vector<std::string> time_ids;

  int n_chains() const { return static_cast<int>(chains.size()); }
  int column_index(const std::string& name) const;
  double at(int chain, long draw, int column) const {
    return chains[chain].draws[static_cast<std::size_t>(draw) * columns.size() + column];
  }
  std::vector<double> column(int chain, int column) const;
};

// Seed of chain c derived from the run seed.
std::uint64_t chain_seed(std::uint64_t seed, int chain);

// Runs n chains (concurrently when hardware allows); each chain's output
// depends only on its seed.
DrawStore run_chains(const ModelConfig& config, const Dataset& data,
                     const UpdatePlan& plan = {});
ChainDraws run_chain(const Model& model, const SamplerSettings& settings, int chain,
                     const UpdatePlan& plan = {}, const ChainState* start = nullptr);

}  // namespace dsemkit
