#include "dsemkit/params.hpp"

#include "dsemkit/errors.hpp"

#include <cmath>
#include <limits>

namespace dsemkit {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int variance_factors(const ModelSpec& spec, int set) {
  for (const auto& p : spec.processes)
    if (p.variance_set == set) return p.n_factors;
  return 1;
}

// Pointers to the scalar slots of a block, in column order. Symmetric
// blocks list the lower triangle; the caller mirrors on write.
std::vector<double*> slots(const BlockInfo& b, ModelParams& p) {
  std::vector<double*> out;
  auto sym = [&](Eigen::MatrixXd& m) {
    for (int r = 0; r < b.dim; ++r)
      for (int c = 0; c <= r; ++c) out.push_back(&m(r, c));
  };
  switch (b.role) {
    case Role::P21: out.push_back(&p.p21); break;
    case Role::B21: out.push_back(&p.b21); break;
    case Role::B22:
      for (int k = 0; k < b.dim; ++k) out.push_back(&p.b22(k));
      break;
    case Role::Alpha:
    case Role::AlphaDerived:
      for (int k = 0; k < b.dim; ++k) out.push_back(&p.alpha[b.set](k));
      break;
    case Role::Delta: out.push_back(&p.delta); break;
    case Role::Beta:
      for (int k = 0; k < b.dim; ++k) out.push_back(&p.beta[b.set](k));
      break;
    case Role::PsiZeta2: sym(p.psi_zeta2[b.set]); break;
    case Role::PsiZeta3: out.push_back(&p.psi_zeta3); break;
    case Role::PsiEta: sym(p.psi_eta[b.set]); break;
    case Role::Lambda:
      for (auto [j, k] : b.cells) out.push_back(&p.lambda[b.set](j, k));
      break;
    case Role::Nu:
      for (auto [j, unused] : b.cells) out.push_back(&p.nu[b.set](j));
      break;
    case Role::PsiY:
      for (int j = 0; j < b.dim; ++j) out.push_back(&p.psi_y[b.set](j));
      break;
  }
  return out;
}

void mirror(const BlockInfo& b, ModelParams& p) {
  if (b.shape != Shape::SymMatrix) return;
  Eigen::MatrixXd& m = b.role == Role::PsiEta ? p.psi_eta[b.set] : p.psi_zeta2[b.set];
  m = m.triangularView<Eigen::Lower>().toDenseMatrix().selfadjointView<Eigen::Lower>();
}

std::vector<double> numbers(const json& v, const std::string& path) {
  std::vector<double> out;
  auto push = [&](const json& x) {
    if (!x.is_number()) throw ParseError(path, "expected numbers");
    out.push_back(x.get<double>());
  };
  if (v.is_number()) {
    push(v);
  } else if (v.is_array()) {
    for (const auto& x : v) {
      if (x.is_array())
        for (const auto& y : x) push(y);
      else
        push(x);
    }
  } else {
    throw ParseError(path, "expected a number or an array");
  }
  return out;
}

Eigen::MatrixXd square(const json& v, int dim, const std::string& path) {
  const auto xs = numbers(v, path);
  if (static_cast<int>(xs.size()) != dim * dim)
    throw ParseError(path, "expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
  Eigen::MatrixXd m(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) m(r, c) = xs[static_cast<std::size_t>(r * dim + c)];
  if (!m.isApprox(m.transpose(), 1e-10)) throw ParseError(path, "matrix must be symmetric");
  return m;
}

double variance_to_precision(double v, const std::string& path) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError(path, "variances must be finite and >= 0");
  return v == 0.0 ? kInf : 1.0 / v;
}

bool outside(const DistributionParams& prior, double x) {
  if (auto u = std::get_if<Uniform>(&prior)) return x <= u->lower || x >= u->upper;
  if (auto t = std::get_if<TruncNormal>(&prior)) return x < t->lower || x > t->upper;
  return false;
}

}  // namespace

int group_factors(const ModelSpec& spec, int group) {
  for (const auto& p : spec.processes)
    if (p.effect_group == group) return p.n_factors;
  return 1;
}

int group_dim(const ModelSpec& spec, int group) {
  const auto& g = spec.effect_groups[group];
  return (g.intercept ? group_factors(spec, group) : 0) + (g.slope ? 1 : 0);
}

ModelParams shaped_params(const ModelSpec& spec) {
  ModelParams p;
  const int J = spec.n_indicators;
  for (const auto& m : spec.measurement) {
    const int K = m.n_factors();
    Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(J, K);
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(J);
    for (int j = 0; j < J; ++j) {
      for (int k = 0; k < K; ++k)
        if (!m.loadings[j][k].free) lam(j, k) = m.loadings[j][k].value;
      if (!m.intercepts[j].free) nu(j) = m.intercepts[j].value;
    }
    p.lambda.push_back(lam);
    p.nu.push_back(nu);
  }
  if (!spec.observed)
    for (int r = 0; r < spec.n_residual_sets; ++r) p.psi_y.push_back(Eigen::VectorXd::Ones(J));
  for (const auto& proc : spec.processes) {
    p.alpha.push_back(Eigen::VectorXd::Zero(proc.n_factors));
    p.beta.push_back(Eigen::VectorXd::Zero(proc.n_factors));
  }
  for (int v = 0; v < spec.n_variance_sets; ++v) {
    const int K = variance_factors(spec, v);
    p.psi_eta.push_back(Eigen::MatrixXd::Identity(K, K));
  }
  for (int g = 0; g < static_cast<int>(spec.effect_groups.size()); ++g) {
    const int d = group_dim(spec, g);
    p.psi_zeta2.push_back(Eigen::MatrixXd::Identity(d, d));
  }
  p.b22 = Eigen::VectorXd::Zero(spec.transition_slopes());
  p.p21 = spec.states.p21_fixed.value_or(0.0);
  return p;
}

void apply_constraints(const ModelSpec& spec, ModelParams& p) {
  if (spec.states.delta_constraint) p.alpha[1] = p.alpha[0].array() - p.delta;
  if (spec.states.p21_fixed) p.p21 = *spec.states.p21_fixed;
}

void flatten(const CompiledIndex& index, const ModelParams& p, double* out) {
  auto& mp = const_cast<ModelParams&>(p);
  for (const auto& b : index.blocks) {
    const auto s = slots(b, mp);
    for (std::size_t k = 0; k < s.size(); ++k) out[b.offset + static_cast<int>(k)] = *s[k];
  }
}

std::vector<double> flatten(const CompiledIndex& index, const ModelParams& p) {
  std::vector<double> out(static_cast<std::size_t>(index.n_columns));
  flatten(index, p, out.data());
  return out;
}

void unflatten(const ModelSpec& spec, const CompiledIndex& index, const double* row, ModelParams& p) {
  if (p.alpha.size() != spec.processes.size()) p = shaped_params(spec);
  for (const auto& b : index.blocks) {
    const auto s = slots(b, p);
    for (std::size_t k = 0; k < s.size(); ++k) *s[k] = row[b.offset + static_cast<int>(k)];
    mirror(b, p);
  }
  apply_constraints(spec, p);
}

Eigen::MatrixXd report_value(const BlockInfo& b, const ModelParams& p) {
  auto& mp = const_cast<ModelParams&>(p);
  if (b.shape == Shape::SymMatrix) {
    const Eigen::MatrixXd& m = b.role == Role::PsiEta ? p.psi_eta[b.set] : p.psi_zeta2[b.set];
    return b.transform == Transform::MatrixInverse ? Eigen::MatrixXd(m.inverse()) : m;
  }
  const auto s = slots(b, mp);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(s.size()), 1);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double x = *s[k];
    out(static_cast<Eigen::Index>(k), 0) = b.transform == Transform::Reciprocal ? 1.0 / x : x;
  }
  return out;
}

TruthParseResult parse_truth(const ModelSpec& spec, const json& params) {
  if (!params.is_object()) throw ParseError("params", "expected an object keyed by parameter name");
  const CompiledIndex index = compile_index(spec);
  TruthParseResult res;
  ModelParams& p = res.params;
  p = shaped_params(spec);

  for (const auto& b : index.blocks) {
    if (b.derived) continue;
    const bool by_report = params.contains(b.report);
    if (!by_report && !params.contains(b.name))
      throw ParseError("params." + b.report, "missing block");
    const std::string key = by_report ? b.report : b.name;
    const std::string path = "params." + key;
    const json& v = params.at(key);
    const bool variance_scale = by_report && b.transform != Transform::Identity;

    if (b.shape == Shape::SymMatrix) {
      Eigen::MatrixXd m = square(v, b.dim, path);
      if (variance_scale) {
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() != Eigen::Success) throw ParseError(path, "covariance must be positive definite");
        m = llt.solve(Eigen::MatrixXd::Identity(b.dim, b.dim));
        m = 0.5 * (m + m.transpose());
      } else if (Eigen::LLT<Eigen::MatrixXd>(m).info() != Eigen::Success) {
        throw ParseError(path, "precision must be positive definite");
      }
      (b.role == Role::PsiEta ? p.psi_eta[b.set] : p.psi_zeta2[b.set]) = m;
      continue;
    }

    std::vector<double> xs = numbers(v, path);
    const auto s = slots(b, p);
    if (b.role == Role::Lambda && xs.size() != s.size()) {
      const auto& lam = p.lambda[b.set];
      if (static_cast<Eigen::Index>(xs.size()) != lam.size())
        throw ParseError(path, "expected " + std::to_string(s.size()) + " free loadings or the full " +
                                   std::to_string(lam.rows()) + "x" + std::to_string(lam.cols()) +
                                   " matrix");
      std::vector<double> free;
      for (auto [j, k] : b.cells) free.push_back(xs[static_cast<std::size_t>(j * lam.cols() + k)]);
      xs = free;
    } else if (b.role == Role::Nu && xs.size() != s.size()) {
      if (static_cast<int>(xs.size()) != spec.n_indicators)
        throw ParseError(path, "expected " + std::to_string(s.size()) + " free intercepts or all " +
                                   std::to_string(spec.n_indicators));
      std::vector<double> free;
      for (auto [j, unused] : b.cells) free.push_back(xs[static_cast<std::size_t>(j)]);
      xs = free;
    }
    if (xs.size() != s.size())
      throw ParseError(path, "expected " + std::to_string(s.size()) + " value(s), got " +
                                 std::to_string(xs.size()));
    for (std::size_t k = 0; k < s.size(); ++k) {
      double x = xs[k];
      if (variance_scale) {
        x = variance_to_precision(x, path);
      } else if (!std::isfinite(x)) {
        throw ParseError(path, "values must be finite");
      } else if (b.transform != Transform::Identity && !(x > 0.0)) {
        throw ParseError(path, "precisions must be > 0");
      }
      *s[k] = x;
      if (auto it = spec.priors.find(b.prior_key); it != spec.priors.end() && outside(it->second, x))
        res.warnings.push_back(path + ": value " + std::to_string(x) + " lies outside the prior support");
    }
  }
  apply_constraints(spec, p);
  return res;
}

json truth_to_json(const ModelSpec& spec, const ModelParams& p) {
  const CompiledIndex index = compile_index(spec);
  json out = json::object();
  for (const auto& b : index.blocks) {
    const Eigen::MatrixXd v = report_value(b, p);
    if (b.shape == Shape::Scalar) {
      out[b.report] = v(0, 0);
    } else if (b.shape == Shape::Vector) {
      json arr = json::array();
      for (Eigen::Index k = 0; k < v.rows(); ++k) arr.push_back(v(k, 0));
      out[b.report] = arr;
    } else {
      json rows = json::array();
      for (Eigen::Index r = 0; r < v.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < v.cols(); ++c) row.push_back(v(r, c));
        rows.push_back(row);
      }
      out[b.report] = rows;
    }
  }
  return out;
}

}  // namespace dsemkit
