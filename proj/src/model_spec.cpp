#include "dsemkit/model_spec.hpp"

#include "dsemkit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dsemkit {

namespace {

enum class Style { Cfa, Observed, Latent };

Style style_of(const ModelSpec& spec) {
  if (spec.ar_order == 0) return Style::Cfa;
  return spec.observed ? Style::Observed : Style::Latent;
}

std::string idx(int a) { return "[" + std::to_string(a + 1) + "]"; }
std::string idx(int a, int b) {
  return "[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]";
}

void fill_columns(BlockInfo& b) {
  b.columns.clear();
  b.report_columns.clear();
  auto add = [&](const std::string& suffix) {
    b.columns.push_back(b.name + suffix);
    b.report_columns.push_back(b.report + suffix);
  };
  switch (b.shape) {
    case Shape::Scalar:
      add("");
      break;
    case Shape::Vector:
      if (b.role == Role::Lambda) {
        const bool multi = b.dim > 1;
        for (auto [j, k] : b.cells) add(multi ? idx(j, k) : idx(j));
      } else if (b.role == Role::Nu) {
        for (auto [j, unused] : b.cells) add(idx(j));
      } else {
        for (int k = 0; k < b.dim; ++k) add(idx(k));
      }
      break;
    case Shape::SymMatrix:
      for (int r = 0; r < b.dim; ++r)
        for (int c = 0; c <= r; ++c) add(idx(r, c));
      break;
  }
}

BlockInfo make_block(std::string name, std::string report, Role role, int set, Shape shape,
                     int dim, Transform tr, bool derived = false) {
  BlockInfo b;
  b.prior_key = derived ? std::string() : name;
  b.name = std::move(name);
  b.report = std::move(report);
  b.role = role;
  b.set = set;
  b.shape = shape;
  b.dim = dim;
  b.transform = tr;
  b.derived = derived;
  return b;
}

bool is_anchor(const MeasurementPattern& m, int j, int k) {
  const Entry& l = m.loadings[j][k];
  if (l.free || l.value != 1.0) return false;
  if (m.intercepts[j].free || m.intercepts[j].value != 0.0) return false;
  for (int q = 0; q < m.n_factors(); ++q)
    if (q != k && (m.loadings[j][q].free || m.loadings[j][q].value != 0.0)) return false;
  return true;
}

bool is_precision(Role r) {
  return r == Role::PsiEta || r == Role::PsiY || r == Role::PsiZeta2 || r == Role::PsiZeta3;
}

std::string check_prior(const BlockInfo& b, const DistributionParams& p) {
  try {
    validate(p);
  } catch (const ParameterDomainError& e) {
    return e.what();
  }
  const bool normalish =
      std::holds_alternative<Normal>(p) || std::holds_alternative<TruncNormal>(p);
  if (b.shape == Shape::SymMatrix) {
    auto w = std::get_if<Wishart>(&p);
    if (!w) return "matrix block needs a wishart prior";
    if (w->scale_inverse.rows() != b.dim) return "wishart dimension does not match the block";
    return {};
  }
  if (is_precision(b.role)) {
    if (!std::holds_alternative<Gamma>(p)) return "precision block needs a gamma prior";
    return {};
  }
  switch (b.role) {
    case Role::P21: {
      auto u = std::get_if<Uniform>(&p);
      if (!u) return "P21 needs a uniform prior";
      if (u->lower < 0.0 || u->upper > 1.0) return "P21 prior must lie inside [0, 1]";
      return {};
    }
    case Role::Beta:
      if (!normalish && !std::holds_alternative<Uniform>(p))
        return "beta needs a uniform or normal prior";
      return {};
    case Role::Delta: {
      auto t = std::get_if<TruncNormal>(&p);
      if (!t || t->lower < 0.0) return "delta_alpha needs a normal prior truncated at or above 0";
      return {};
    }
    default:
      if (!normalish) return "block needs a normal or truncated normal prior";
      return {};
  }
}

}  // namespace

bool ModelSpec::has_time_slope() const {
  return std::any_of(processes.begin(), processes.end(),
                     [](const ProcessSpec& p) { return p.time_slope; });
}

bool ModelSpec::operator==(const ModelSpec& o) const {
  return n_indicators == o.n_indicators && observed == o.observed && ar_order == o.ar_order &&
         centering == o.centering && measurement == o.measurement &&
         n_residual_sets == o.n_residual_sets && n_variance_sets == o.n_variance_sets &&
         effect_groups == o.effect_groups && processes == o.processes && states == o.states &&
         priors == o.priors;
}

int ModelSpec::transition_slopes() const {
  if (states.n_states < 2 || processes.empty()) return 0;
  return processes[0].n_factors;
}

std::string state_suffix(const ModelSpec& spec, int state, bool per_state) {
  if (!per_state || spec.n_states() < 2) return "";
  return "_S" + std::to_string(state + 1);
}

std::vector<std::string> CompiledIndex::columns() const {
  std::vector<std::string> out;
  for (const auto& b : blocks) out.insert(out.end(), b.columns.begin(), b.columns.end());
  return out;
}

std::vector<std::string> CompiledIndex::report_columns() const {
  std::vector<std::string> out;
  for (const auto& b : blocks)
    out.insert(out.end(), b.report_columns.begin(), b.report_columns.end());
  return out;
}

const BlockInfo* CompiledIndex::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name || b.report == name) return &b;
  return nullptr;
}

CompiledIndex compile_index(const ModelSpec& spec) {
  CompiledIndex out;
  auto& v = out.blocks;
  const Style style = style_of(spec);
  const int S = spec.n_states();

  if (S == 2) {
    if (!spec.states.p21_fixed)
      v.push_back(make_block("P21", "P21", Role::P21, 0, Shape::Scalar, 1, Transform::Identity));
    v.push_back(make_block("b21", "b21", Role::B21, 0, Shape::Scalar, 1, Transform::Identity));
    const int q = spec.transition_slopes();
    v.push_back(make_block("b22", "b22", Role::B22, 0, q == 1 ? Shape::Scalar : Shape::Vector, q,
                           Transform::Identity));
  }

  for (int s = 0; s < S; ++s) {
    const int K = spec.processes[s].n_factors;
    const Shape sh = K == 1 ? Shape::Scalar : Shape::Vector;
    if (style == Style::Cfa) {
      v.push_back(make_block("mu_eta", "mu_eta", Role::Alpha, s, sh, K, Transform::Identity));
      continue;
    }
    const std::string n = "alpha" + state_suffix(spec, s, true);
    const bool derived = s == 1 && spec.states.delta_constraint;
    v.push_back(make_block(n, n, derived ? Role::AlphaDerived : Role::Alpha, s, sh, K,
                           Transform::Identity, derived));
  }
  if (spec.states.delta_constraint)
    v.push_back(make_block("delta_alpha", "delta_alpha", Role::Delta, 0, Shape::Scalar, 1,
                           Transform::Identity));

  if (style != Style::Cfa) {
    for (int s = 0; s < S; ++s) {
      const int K = spec.processes[s].n_factors;
      const std::string n = "beta" + state_suffix(spec, s, true);
      v.push_back(make_block(n, n, Role::Beta, s, K == 1 ? Shape::Scalar : Shape::Vector, K,
                             Transform::Identity));
    }
  }

  const std::string re = style == Style::Observed ? "eps" : "zeta";
  const int G = static_cast<int>(spec.effect_groups.size());
  for (int g = 0; g < G; ++g) {
    int K = 1;
    for (const auto& p : spec.processes)
      if (p.effect_group == g) K = p.n_factors;
    const EffectGroup& eg = spec.effect_groups[g];
    const int dim = (eg.intercept ? K : 0) + (eg.slope ? 1 : 0);
    const std::string sfx = state_suffix(spec, g, G > 1);
    if (dim > 1)
      v.push_back(make_block("psi_" + re + "2" + sfx, "Sigma_" + re + "2" + sfx, Role::PsiZeta2, g,
                             Shape::SymMatrix, dim, Transform::MatrixInverse));
    else
      v.push_back(make_block("psi_" + re + "2" + sfx, "sigma2_" + re + "2" + sfx, Role::PsiZeta2,
                             g, Shape::Scalar, 1, Transform::Reciprocal));
  }
  if (spec.has_time_slope())
    v.push_back(make_block("psi_" + re + "3", "sigma2_" + re + "3", Role::PsiZeta3, 0,
                           Shape::Scalar, 1, Transform::Reciprocal));

  for (int vs = 0; vs < spec.n_variance_sets; ++vs) {
    int K = 1;
    for (const auto& p : spec.processes)
      if (p.variance_set == vs) K = p.n_factors;
    const std::string sfx = state_suffix(spec, vs, spec.n_variance_sets > 1);
    if (style == Style::Observed)
      v.push_back(make_block("psi_y", "sigma2_y", Role::PsiEta, vs, Shape::Scalar, 1,
                             Transform::Reciprocal));
    else if (style == Style::Cfa || K > 1)
      v.push_back(make_block("psi_eta" + sfx, "Sigma_eta" + sfx, Role::PsiEta, vs,
                             Shape::SymMatrix, K, Transform::MatrixInverse));
    else
      v.push_back(make_block("psi_eta" + sfx, "sigma2_eta" + sfx, Role::PsiEta, vs, Shape::Scalar,
                             1, Transform::Reciprocal));
  }

  if (style != Style::Observed) {
    const int M = static_cast<int>(spec.measurement.size());
    for (int m = 0; m < M; ++m) {
      const auto& pat = spec.measurement[m];
      const std::string sfx = state_suffix(spec, m, M > 1);
      BlockInfo lam = make_block("lambda" + sfx, "lambda" + sfx, Role::Lambda, m, Shape::Vector,
                                 pat.n_factors(), Transform::Identity);
      for (int j = 0; j < static_cast<int>(pat.loadings.size()); ++j)
        for (int k = 0; k < pat.n_factors(); ++k)
          if (pat.loadings[j][k].free) lam.cells.emplace_back(j, k);
      if (!lam.cells.empty()) v.push_back(std::move(lam));
    }
    for (int m = 0; m < M; ++m) {
      const auto& pat = spec.measurement[m];
      const std::string sfx = state_suffix(spec, m, M > 1);
      BlockInfo nu = make_block("nu" + sfx, "nu" + sfx, Role::Nu, m, Shape::Vector, 1,
                                Transform::Identity);
      for (int j = 0; j < static_cast<int>(pat.intercepts.size()); ++j)
        if (pat.intercepts[j].free) nu.cells.emplace_back(j, 0);
      if (!nu.cells.empty()) v.push_back(std::move(nu));
    }
    for (int r = 0; r < spec.n_residual_sets; ++r) {
      const std::string sfx = state_suffix(spec, r, spec.n_residual_sets > 1);
      v.push_back(make_block("psi_y" + sfx, "sigma2_y" + sfx, Role::PsiY, r, Shape::Vector,
                             spec.n_indicators, Transform::Reciprocal));
    }
  }

  int offset = 0;
  for (auto& b : v) {
    fill_columns(b);
    b.offset = offset;
    offset += b.size();
  }
  out.n_columns = offset;
  return out;
}

std::vector<std::string> validate_spec(const ModelSpec& spec) {
  std::vector<std::string> out;
  auto add = [&](const std::string& path, const std::string& msg) { out.push_back(path + ": " + msg); };

  const int S = spec.n_states();
  if (S < 1 || S > 2) {
    add("states.n_states", "only 1 or 2 states supported");
    return out;
  }
  if (spec.ar_order != 0 && spec.ar_order != 1) {
    add("model.ar_order", "only AR(1) dynamics are implemented");
    return out;
  }
  if (static_cast<int>(spec.processes.size()) != S) {
    add("model.processes", "need exactly one process per state");
    return out;
  }
  if (spec.n_indicators < 1) add("model.n_indicators", "need at least one indicator");
  const int M = static_cast<int>(spec.measurement.size());
  if (spec.observed) {
    if (spec.n_indicators != 1) add("model", "observed-outcome models have exactly one indicator");
    if (M != 0) add("model.measurement", "observed-outcome models have no measurement layer");
    if (spec.ar_order == 0) add("model", "observed-outcome models need AR(1) dynamics");
  }
  if (spec.ar_order == 0) {
    if (S != 1) add("states.n_states", "cross-sectional models have a single state");
    if (!spec.effect_groups.empty()) add("model.random_effects", "cross-sectional models have no random effects");
    if (spec.has_time_slope()) add("model.time_effect", "cross-sectional models have no time effects");
  }

  for (int m = 0; m < M; ++m) {
    const auto& pat = spec.measurement[m];
    const std::string path = "measurement[" + std::to_string(m) + "]";
    if (static_cast<int>(pat.loadings.size()) != spec.n_indicators ||
        static_cast<int>(pat.intercepts.size()) != spec.n_indicators) {
      add(path, "pattern rows must equal the indicator count");
      continue;
    }
    const int K = pat.n_factors();
    if (K < 1) {
      add(path, "need at least one factor");
      continue;
    }
    bool ragged = false;
    for (const auto& row : pat.loadings) ragged |= static_cast<int>(row.size()) != K;
    if (ragged) {
      add(path, "loading pattern is ragged");
      continue;
    }
    for (int j = 0; j < spec.n_indicators; ++j) {
      bool loads = false;
      for (int k = 0; k < K; ++k) loads |= pat.loadings[j][k].free || pat.loadings[j][k].value != 0.0;
      if (!loads) add(path + ".indicator[" + std::to_string(j + 1) + "]", "loads on no factor");
    }
    for (int k = 0; k < K; ++k) {
      int anchors = 0;
      for (int j = 0; j < spec.n_indicators; ++j) anchors += is_anchor(pat, j, k) ? 1 : 0;
      const std::string fpath = path + ".factor[" + std::to_string(k + 1) + "]";
      if (anchors == 0) add(fpath, "no scaling anchor");
      if (anchors > 1) add(fpath, "more than one scaling anchor");
    }
  }

  const int G = static_cast<int>(spec.effect_groups.size());
  for (int s = 0; s < S; ++s) {
    const auto& p = spec.processes[s];
    const std::string path = "processes[" + std::to_string(s) + "]";
    if (p.n_factors < 1) add(path, "need at least one factor");
    if (p.n_factors > kMaxFactors)
      add(path, "at most " + std::to_string(kMaxFactors) + " factors per state are supported");
    if (!spec.observed) {
      if (p.measurement_set < 0 || p.measurement_set >= M)
        add(path, "measurement set out of range");
      else if (spec.measurement[p.measurement_set].n_factors() != p.n_factors)
        add(path, "factor count differs from its measurement pattern");
    }
    if (p.residual_set < 0 || p.residual_set >= spec.n_residual_sets)
      add(path, "residual set out of range");
    if (p.variance_set < 0 || p.variance_set >= spec.n_variance_sets)
      add(path, "variance set out of range");
    if (p.effect_group >= G) add(path, "random-effect group out of range");
    if (p.effect_group >= 0 && p.effect_group < G) {
      const auto& g = spec.effect_groups[p.effect_group];
      if (g.slope && p.n_factors != 1) add(path, "random AR slopes need a single-factor process");
      if (!g.intercept && !g.slope) add(path, "random-effect group is empty");
    }
    if (p.time_slope && p.n_factors != 1) add(path, "time-specific slopes need a single-factor process");
    for (int q = 0; q < s; ++q) {
      const auto& o = spec.processes[q];
      if (o.variance_set == p.variance_set && o.n_factors != p.n_factors)
        add(path, "shared factor variance across processes of different dimension");
      if (o.effect_group >= 0 && o.effect_group == p.effect_group && o.n_factors != p.n_factors)
        add(path, "shared random effects across processes of different dimension");
    }
  }

  if (spec.states.delta_constraint) {
    if (S != 2) add("states.delta_constraint", "needs two states");
    else if (spec.processes[0].n_factors != 1 || spec.processes[1].n_factors != 1)
      add("states.delta_constraint", "needs single-factor processes");
  }
  if (spec.states.p21_fixed) {
    const double p = *spec.states.p21_fixed;
    if (!(p >= 0.0 && p <= 1.0)) add("states.p21_fixed", "must lie in [0, 1]");
  }
  if (!out.empty()) return out;

  const CompiledIndex index = compile_index(spec);
  for (const auto& b : index.blocks) {
    if (b.derived) continue;
    auto it = spec.priors.find(b.prior_key);
    if (it == spec.priors.end()) {
      add("priors." + b.prior_key, "missing prior");
      continue;
    }
    const std::string msg = check_prior(b, it->second);
    if (!msg.empty()) add("priors." + b.prior_key, msg);
  }
  for (const auto& [key, unused] : spec.priors) {
    bool known = false;
    for (const auto& b : index.blocks) known |= (!b.derived && b.prior_key == key);
    if (!known) add("priors." + key, "not a parameter block of this model");
  }
  return out;
}

std::vector<std::string> validate_against_data(const ModelSpec& spec, int n_patients, int n_times,
                                               int n_indicators) {
  std::vector<std::string> out;
  if (n_indicators != spec.n_indicators)
    out.push_back("data: model expects " + std::to_string(spec.n_indicators) +
                  " indicators, data has " + std::to_string(n_indicators));
  if (n_patients < 1) out.push_back("data: no patients");
  if (spec.has_time_slope() && n_times < 2)
    out.push_back("model.time_effect: time-specific effects need at least 2 time points");
  if (spec.n_states() == 2 && n_times < 2)
    out.push_back("states: state switching needs at least 2 time points");
  if (spec.ar_order == 0 && n_times != 1)
    out.push_back("data: cross-sectional models take a single time point");
  return out;
}

std::vector<std::string> resolve_prior_key(const ModelSpec& spec, const std::string& key) {
  static const std::map<std::string, std::string> aliases = {
      {"residual_precision", "psi_y"},     {"loading", "lambda"},
      {"intercept", "nu"},                 {"factor_mean", "mu_eta"},
      {"factor_precision", "psi_eta"},     {"random_effect_precision", "psi_zeta2"},
      {"time_effect_precision", "psi_zeta3"}};
  std::string base = key;
  if (auto it = aliases.find(key); it != aliases.end()) base = it->second;
  if (spec.observed) {
    if (base == "psi_zeta2") base = "psi_eps2";
    if (base == "psi_zeta3") base = "psi_eps3";
  }
  std::vector<std::string> out;
  for (const auto& b : compile_index(spec).blocks) {
    if (b.derived) continue;
    if (b.prior_key == base || b.prior_key.rfind(base + "_S", 0) == 0) out.push_back(b.prior_key);
  }
  return out;
}

}  // namespace dsemkit
