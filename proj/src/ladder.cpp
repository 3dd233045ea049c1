#include "dsemkit/ladder.hpp"

#include "dsemkit/errors.hpp"

#include <limits>

namespace dsemkit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Wishart wishart_identity(int d) { return Wishart{Eigen::MatrixXd::Identity(d, d), double(d)}; }

void measurement_priors(ModelSpec& spec) {
  const int M = static_cast<int>(spec.measurement.size());
  for (int m = 0; m < M; ++m) {
    const std::string sfx = state_suffix(spec, m, M > 1);
    spec.priors["lambda" + sfx] = TruncNormal{0.5, 1.0, 0.0, kInf};
    spec.priors["nu" + sfx] = Normal{0.0, 0.01};
  }
  for (int r = 0; r < spec.n_residual_sets; ++r)
    spec.priors["psi_y" + state_suffix(spec, r, spec.n_residual_sets > 1)] = Gamma{1.0, 1.0};
}

// Drops priors for blocks that have no free cells (e.g. a single anchored
// indicator) so the prior set matches the compiled index exactly.
void prune_priors(ModelSpec& spec) {
  const CompiledIndex index = compile_index(spec);
  for (auto it = spec.priors.begin(); it != spec.priors.end();) {
    bool used = false;
    for (const auto& b : index.blocks) used |= b.prior_key == it->first;
    it = used ? std::next(it) : spec.priors.erase(it);
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

}  // namespace

MeasurementPattern block_pattern(int n_factors, int indicators_per_factor) {
  MeasurementPattern m;
  const int J = n_factors * indicators_per_factor;
  m.loadings.assign(J, std::vector<Entry>(n_factors, fixed_at(0.0)));
  m.intercepts.assign(J, free_cell());
  for (int k = 0; k < n_factors; ++k) {
    for (int r = 0; r < indicators_per_factor; ++r) {
      const int j = k * indicators_per_factor + r;
      m.loadings[j][k] = r == 0 ? fixed_at(1.0) : free_cell();
      if (r == 0) m.intercepts[j] = fixed_at(0.0);
    }
  }
  return m;
}

MeasurementPattern single_factor_pattern(int n_indicators) {
  return block_pattern(1, n_indicators);
}

ModelSpec build_cfa(int n_factors, int indicators_per_factor) {
  require(n_factors >= 1, "cfa: need at least one factor");
  require(indicators_per_factor >= 2,
          "cfa: under-identified, each factor needs at least 2 indicators");
  ModelSpec spec;
  spec.builder = {"cfa", n_factors, indicators_per_factor, 0, false, false};
  spec.n_indicators = n_factors * indicators_per_factor;
  spec.ar_order = 0;
  spec.measurement = {block_pattern(n_factors, indicators_per_factor)};
  spec.processes = {ProcessSpec{n_factors, 0, 0, 0, -1, false}};
  measurement_priors(spec);
  spec.priors["mu_eta"] = Normal{0.0, 0.01};
  spec.priors["psi_eta"] = wishart_identity(n_factors);
  return spec;
}

ModelSpec build_ar1_observed() {
  ModelSpec spec;
  spec.builder = {"ar1_observed", 0, 0, 1, false, false};
  spec.n_indicators = 1;
  spec.observed = true;
  spec.processes = {ProcessSpec{}};
  spec.priors["alpha"] = Normal{0.0, 0.1};
  spec.priors["beta"] = Uniform{-1.0, 1.0};
  spec.priors["psi_y"] = Gamma{1.0, 1.0};
  return spec;
}

ModelSpec build_ar1_latent(int n_indicators) {
  require(n_indicators >= 2, "ar1_latent: under-identified, need at least 2 indicators");
  ModelSpec spec;
  spec.builder = {"ar1_latent", 0, 0, n_indicators, false, false};
  spec.n_indicators = n_indicators;
  spec.measurement = {single_factor_pattern(n_indicators)};
  spec.processes = {ProcessSpec{}};
  measurement_priors(spec);
  spec.priors["alpha"] = Normal{0.0, 0.1};
  spec.priors["beta"] = Uniform{-1.0, 1.0};
  spec.priors["psi_eta"] = Gamma{1.0, 1.0};
  return spec;
}

ModelSpec build_two_level(int n_indicators, bool random_slope) {
  require(n_indicators >= 1, "two_level: need at least one indicator");
  ModelSpec spec = n_indicators == 1 ? build_ar1_observed() : build_ar1_latent(n_indicators);
  spec.builder = {"two_level", 0, 0, n_indicators, random_slope, false};
  spec.effect_groups = {EffectGroup{true, random_slope}};
  spec.processes[0].effect_group = 0;
  const std::string key = spec.observed ? "psi_eps2" : "psi_zeta2";
  if (random_slope)
    spec.priors[key] = wishart_identity(2);
  else
    spec.priors[key] = Gamma{1.0, 1.0};
  return spec;
}

ModelSpec build_cross_classified(int n_indicators) {
  ModelSpec spec = build_two_level(n_indicators, true);
  spec.builder = {"cross_classified", 0, 0, n_indicators, true, false};
  spec.processes[0].time_slope = true;
  spec.priors[spec.observed ? "psi_eps3" : "psi_zeta3"] = Gamma{1.0, 1.0};
  return spec;
}

ModelSpec build_dsem(int n_indicators) {
  require(n_indicators >= 2, "dsem: under-identified, need at least 2 indicators");
  ModelSpec spec = build_two_level(n_indicators, true);
  spec.builder = {"dsem", 0, 0, n_indicators, true, false};
  return spec;
}

ModelSpec build_dlcsem_sudden_gain(int n_indicators, const StateOptions& opts) {
  require(n_indicators >= 2, "dlcsem_sudden_gain: under-identified, need at least 2 indicators");
  require(opts.n_states == 1 || opts.n_states == 2, "states.n_states: only 1 or 2 states supported");
  const BuilderCall call{"dlcsem_sudden_gain", 0, 0, n_indicators, true, false};
  if (opts.n_states == 1) {
    ModelSpec spec = build_dsem(n_indicators);
    spec.builder = call;
    return spec;
  }
  ModelSpec spec;
  spec.builder = call;
  spec.n_indicators = n_indicators;
  spec.measurement = {single_factor_pattern(n_indicators)};
  spec.effect_groups = {EffectGroup{true, true}};
  spec.states.n_states = 2;
  spec.states.p21_fixed = opts.p21_fixed;
  spec.states.delta_constraint = true;
  spec.states.delta_hierarchical = true;
  spec.states.tie_state_variances = opts.tie_state_variances;
  spec.n_variance_sets = opts.tie_state_variances ? 1 : 2;
  spec.processes = {ProcessSpec{1, 0, 0, 0, 0, false},
                    ProcessSpec{1, 0, 0, opts.tie_state_variances ? 0 : 1, 0, false}};
  measurement_priors(spec);
  spec.priors["alpha_S1"] = Normal{0.0, 0.001};
  // The mean is replaced each sweep by sqrt(sigma2_eta) of state 1.
  spec.priors["delta_alpha"] = TruncNormal{0.0, 1.0, 0.0, kInf};
  spec.priors["beta_S1"] = Uniform{0.0, 1.0};
  spec.priors["beta_S2"] = Uniform{0.0, 1.0};
  spec.priors["psi_zeta2"] = wishart_identity(2);
  for (int v = 0; v < spec.n_variance_sets; ++v)
    spec.priors["psi_eta" + state_suffix(spec, v, spec.n_variance_sets > 1)] = Gamma{1.0, 1.0};
  spec.priors["b21"] = Normal{0.0, 0.01};
  spec.priors["b22"] = TruncNormal{0.0, 1.0, 0.0, kInf};
  if (!opts.p21_fixed) spec.priors["P21"] = Uniform{0.0, 0.1};
  return spec;
}

ModelSpec build_dlcsem_fusion(bool swap_states, const StateOptions& opts) {
  require(opts.n_states == 2, "dlcsem_fusion: the fusion model has exactly 2 states");
  ModelSpec spec;
  spec.builder = {"dlcsem_fusion", 0, 0, 9, false, swap_states};
  spec.n_indicators = 9;
  const MeasurementPattern three = block_pattern(3, 3);
  const MeasurementPattern one = single_factor_pattern(9);
  const int k1 = swap_states ? 1 : 3;
  const int k2 = swap_states ? 3 : 1;
  spec.measurement = swap_states ? std::vector{one, three} : std::vector{three, one};
  spec.n_residual_sets = 2;
  spec.n_variance_sets = 2;
  spec.effect_groups = {EffectGroup{true, false}, EffectGroup{true, false}};
  spec.processes = {ProcessSpec{k1, 0, 0, 0, 0, false}, ProcessSpec{k2, 1, 1, 1, 1, false}};
  spec.states.n_states = 2;
  spec.states.p21_fixed = opts.p21_fixed;
  spec.states.tie_state_variances = false;
  measurement_priors(spec);
  const int ks[2] = {k1, k2};
  for (int s = 0; s < 2; ++s) {
    const std::string sfx = state_suffix(spec, s, true);
    spec.priors["alpha" + sfx] = Normal{0.0, 0.1};
    spec.priors["beta" + sfx] = Uniform{0.0, 1.0};
    if (ks[s] > 1) {
      spec.priors["psi_eta" + sfx] = wishart_identity(ks[s]);
      spec.priors["psi_zeta2" + sfx] = wishart_identity(ks[s]);
    } else {
      spec.priors["psi_eta" + sfx] = Gamma{1.0, 1.0};
      spec.priors["psi_zeta2" + sfx] = Gamma{1.0, 1.0};
    }
  }
  spec.priors["b21"] = Normal{0.0, 0.01};
  spec.priors["b22"] = TruncNormal{0.0, 1.0, 0.0, kInf};
  if (!opts.p21_fixed) spec.priors["P21"] = Uniform{0.0, 0.1};
  prune_priors(spec);
  return spec;
}

ModelSpec build_from_call(const BuilderCall& call, const StateOptions& opts) {
  const std::string& n = call.name;
  const bool multi_state = n == "dlcsem_sudden_gain" || n == "dlcsem_fusion";
  if (!multi_state && opts.n_states != 1)
    throw ParseError("states.n_states", "builder '" + n + "' has a single state");
  if (n == "cfa") return build_cfa(call.n_factors, call.indicators_per_factor);
  if (n == "ar1_observed") return build_ar1_observed();
  if (n == "ar1_latent") return build_ar1_latent(call.n_indicators);
  if (n == "two_level") return build_two_level(call.n_indicators, call.random_slope);
  if (n == "cross_classified") return build_cross_classified(call.n_indicators);
  if (n == "dsem") return build_dsem(call.n_indicators);
  if (n == "dlcsem_sudden_gain") return build_dlcsem_sudden_gain(call.n_indicators, opts);
  if (n == "dlcsem_fusion") return build_dlcsem_fusion(call.swap_states, opts);
  throw ParseError("model.builder", "unknown builder '" + n + "'");
}

}  // namespace dsemkit
