#include "dsemkit/sampler.hpp"

#include "dsemkit/errors.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace dsemkit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTargetAcceptance = 0.44;

enum StreamId { kImpute, kFactors, kMeasurement, kStructural, kCovariances, kStates, kTransition,
                kInit, kStreamCount };

using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2 * kMaxFactors, 1>;
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 2 * kMaxFactors,
                               2 * kMaxFactors>;

struct ScalarPrior {
  double mean = 0.0;
  double prec = 0.0;
  double lo = -kInf;
  double hi = kInf;
};

ScalarPrior scalar_prior(const DistributionParams& p) {
  if (auto n = std::get_if<Normal>(&p)) return {n->mean, n->precision, -kInf, kInf};
  if (auto t = std::get_if<TruncNormal>(&p)) return {t->mean, t->precision, t->lower, t->upper};
  if (auto u = std::get_if<Uniform>(&p)) return {0.0, 0.0, u->lower, u->upper};
  throw ContractError(std::string("unexpected prior family ") + family_name(p));
}

double log_prior(const ScalarPrior& p, double x) {
  if (x < p.lo || x > p.hi) return -kInf;
  return -0.5 * p.prec * (x - p.mean) * (x - p.mean);
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double draw_truncated(RandomStream& rs, double mean, double prec, double lo, double hi) {
  const double sd = 1.0 / std::sqrt(prec);
  const double x = mean + sd * sample_std_truncated(rs, (lo - mean) / sd, (hi - mean) / sd);
  return std::clamp(x, lo, hi);
}

// x ~ N(Q^{-1} b, Q^{-1}) restricted to the box [lo, hi]. Each bounded
// coordinate is drawn from its truncated conditional given the other bounded
// coordinates with the unbounded ones integrated out; the unbounded block is
// then drawn jointly given the bounded one.
void sample_box_gaussian(RandomStream& rs, const SmallMat& Q, const SmallVec& b, const SmallVec& lo,
                         const SmallVec& hi, SmallVec& x, std::string_view label) {
  const int n = static_cast<int>(b.size());
  int bounded[2 * kMaxFactors], unbounded[2 * kMaxFactors];
  int nb = 0, nu = 0;
  for (int k = 0; k < n; ++k) {
    if (std::isfinite(lo(k)) || std::isfinite(hi(k)))
      bounded[nb++] = k;
    else
      unbounded[nu++] = k;
  }
  for (int q = 0; q < nb; ++q) {
    const int k = bounded[q];
    double m, v;
    if (nu == 0) {
      double lin = b(k);
      for (int r = 0; r < nb; ++r)
        if (r != q) lin -= Q(k, bounded[r]) * x(bounded[r]);
      m = lin / Q(k, k);
      v = 1.0 / Q(k, k);
    } else {
      const int na = nu + 1;
      SmallMat qa(na, na);
      SmallVec la(na);
      int ids[2 * kMaxFactors];
      ids[0] = k;
      for (int r = 0; r < nu; ++r) ids[r + 1] = unbounded[r];
      for (int r = 0; r < na; ++r) {
        la(r) = b(ids[r]);
        for (int o = 0; o < nb; ++o)
          if (o != q) la(r) -= Q(ids[r], bounded[o]) * x(bounded[o]);
        for (int c = 0; c < na; ++c) qa(r, c) = Q(ids[r], ids[c]);
      }
      Eigen::LLT<SmallMat> llt(qa);
      if (llt.info() != Eigen::Success) throw LinearAlgebraError(std::string(label) + ": conditional precision not positive definite");
      const SmallVec mean = llt.solve(la);
      SmallVec e0 = SmallVec::Zero(na);
      e0(0) = 1.0;
      m = mean(0);
      v = llt.solve(e0)(0);
    }
    x(k) = draw_truncated(rs, m, 1.0 / v, lo(k), hi(k));
  }
  if (nu == 0) return;
  SmallMat qu(nu, nu);
  SmallVec lu(nu);
  for (int r = 0; r < nu; ++r) {
    lu(r) = b(unbounded[r]);
    for (int o = 0; o < nb; ++o) lu(r) -= Q(unbounded[r], bounded[o]) * x(bounded[o]);
    for (int c = 0; c < nu; ++c) qu(r, c) = Q(unbounded[r], unbounded[c]);
  }
  Eigen::LLT<SmallMat> llt(qu);
  if (llt.info() != Eigen::Success) throw LinearAlgebraError(std::string(label) + ": conditional precision not positive definite");
  const SmallVec mean = llt.solve(lu);
  SmallVec z(nu);
  for (int r = 0; r < nu; ++r) z(r) = rs.normal();
  const SmallVec dx = llt.matrixU().solve(z);
  for (int r = 0; r < nu; ++r) x(unbounded[r]) = mean(r) + dx(r);
}

// Gaussian draw from precision Q and linear term b.
void sample_gaussian(RandomStream& rs, const SmallMat& Q, const SmallVec& b, SmallVec& x,
                     std::string_view label) {
  const int n = static_cast<int>(b.size());
  if (n == 1) {
    if (!(Q(0, 0) > 0)) throw LinearAlgebraError(std::string(label) + ": conditional precision not positive");
    x.resize(1);
    x(0) = b(0) / Q(0, 0) + rs.normal() / std::sqrt(Q(0, 0));
    return;
  }
  Eigen::LLT<SmallMat> llt(Q);
  if (llt.info() != Eigen::Success) throw LinearAlgebraError(std::string(label) + ": conditional precision not positive definite");
  SmallVec z(n);
  for (int r = 0; r < n; ++r) z(r) = rs.normal();
  x = llt.solve(b) + SmallVec(llt.matrixU().solve(z));
}

// Q += D P D and b += D P z with D = diag(d).
void accumulate(SmallMat& Q, SmallVec& b, const SmallVec& d, const Eigen::MatrixXd& P, const SmallVec& z) {
  const int K = static_cast<int>(d.size());
  for (int r = 0; r < K; ++r) {
    double pz = 0.0;
    for (int c = 0; c < K; ++c) {
      Q(r, c) += d(r) * P(r, c) * d(c);
      pz += P(r, c) * z(c);
    }
    b(r) += d(r) * pz;
  }
}

// Read-only view of one state's process under the current values.
struct Proc {
  int s = 0;
  int K = 1;
  int T = 1;
  int dim = 0;
  bool icpt = false;
  bool slope = false;
  bool time = false;
  double c = 1.0;
  const double* eta = nullptr;
  const Eigen::VectorXd* alpha = nullptr;
  const Eigen::VectorXd* beta = nullptr;
  const Eigen::MatrixXd* P = nullptr;
  const double* eff = nullptr;
  const double* w = nullptr;

  double a(int i, int k) const { return (*alpha)(k) + (icpt ? eff[i * dim + k] : 0.0); }
  double B(int i, int t, int k) const {
    return (*beta)(k) + (slope ? eff[i * dim + dim - 1] : 0.0) + (time ? w[t] : 0.0);
  }
  double e(int i, int t, int k) const { return eta[(static_cast<std::size_t>(i) * T + t) * K + k]; }
};

Proc make_proc(const Model& model, const ChainState& st, int s) {
  const auto& ps = model.spec().processes[s];
  Proc p;
  p.s = s;
  p.K = ps.n_factors;
  p.T = model.T();
  p.c = model.spec().centering ? 1.0 : 0.0;
  p.eta = st.eta[s].data();
  p.alpha = &st.params.alpha[s];
  p.beta = &st.params.beta[s];
  p.P = &st.params.psi_eta[ps.variance_set];
  if (ps.effect_group >= 0) {
    const auto& g = model.spec().effect_groups[ps.effect_group];
    p.icpt = g.intercept;
    p.slope = g.slope;
    p.dim = group_dim(model.spec(), ps.effect_group);
    p.eff = st.effects[ps.effect_group].data();
  }
  p.time = ps.time_slope;
  p.w = st.time_effects.data();
  return p;
}

const DistributionParams& prior_of(const Model& model, Role role, int set) {
  for (const auto& b : model.index().blocks)
    if (b.role == role && b.set == set && !b.derived) return model.spec().priors.at(b.prior_key);
  throw ContractError("no prior for parameter block");
}

int active_state(const Model& model, const ChainState& st, int i, int t) {
  return model.S() == 1 ? 0 : st.states[static_cast<std::size_t>(i) * model.T() + t];
}

double transition_logit(const ChainState& st, const double* eta1, int K1) {
  double x = st.params.b21;
  for (int k = 0; k < K1; ++k) x += st.params.b22(k) * eta1[k];
  return x;
}

// log P(S_{t+1} = next | S_t = 0, eta^{(1)}_t)
double log_stay_term(const ChainState& st, const double* eta1, int K1, int next) {
  const double x = transition_logit(st, eta1, K1);
  return next == 0 ? log_sigmoid(x) : log_sigmoid(-x);
}

void adapt(AdaptiveStep& step, bool accepted, bool adapting) {
  ++step.proposed;
  if (accepted) ++step.accepted;
  if (!adapting) {
    ++step.proposed_after_burnin;
    if (accepted) ++step.accepted_after_burnin;
    return;
  }
  const double gamma = 1.0 / std::pow(static_cast<double>(step.proposed) + 1.0, 0.6);
  step.scale *= std::exp(gamma * ((accepted ? 1.0 : 0.0) - kTargetAcceptance));
  step.scale = std::clamp(step.scale, 1e-4, 1e3);
}

void update_factor_cell_scalar(const Model& model, ChainState& st, const Proc& p, int i, int t,
                               RandomStream& rs) {
  const ModelSpec& spec = model.spec();
  const int T = model.T();
  const int J = model.J();
  const std::size_t cell = static_cast<std::size_t>(i) * T + t;
  double& eta = st.eta[p.s][cell];
  const int act = active_state(model, st, i, t);
  double prec = 0.0, lin = 0.0;
  if (spec.observed) {
    if (model.data().is_observed(i, t, 0)) return;
  } else if (act == p.s) {
    const auto& ps = spec.processes[p.s];
    const auto& lam = st.params.lambda[ps.measurement_set];
    const auto& nu = st.params.nu[ps.measurement_set];
    const auto& psi = st.params.psi_y[ps.residual_set];
    const double* y = &st.y[cell * J];
    for (int j = 0; j < J; ++j) {
      const double l = lam(j, 0);
      if (l == 0.0) continue;
      prec += l * l * psi(j);
      lin += l * psi(j) * (y[j] - nu(j));
    }
  }
  const double P = (*p.P)(0, 0);
  if (spec.ar_order == 0) {
    prec += P;
    lin += P * (*p.alpha)(0);
  } else {
    const double a = p.a(i, 0);
    const double m = t == 0 ? a : a + p.B(i, t, 0) * (p.e(i, t - 1, 0) - p.c * a);
    prec += P;
    lin += P * m;
    if (t + 1 < T) {
      const double b1 = p.B(i, t + 1, 0);
      prec += b1 * b1 * P;
      lin += b1 * P * (p.e(i, t + 1, 0) - a + p.c * b1 * a);
    }
  }
  const double proposal = lin / prec + rs.normal() / std::sqrt(prec);
  if (model.S() == 2 && p.s == 0 && act == 0 && t + 1 < T) {
    const int next = st.states[cell + 1];
    const double log_ratio = log_stay_term(st, &proposal, 1, next) - log_stay_term(st, &eta, 1, next);
    const bool accept = log_ratio >= 0.0 || std::log(rs.uniform()) < log_ratio;
    adapt(st.factor_mh, accept, false);
    if (accept) eta = proposal;
    return;
  }
  eta = proposal;
}

void update_factor_cell(const Model& model, ChainState& st, const Proc& p, int i, int t,
                        RandomStream& rs) {
  const ModelSpec& spec = model.spec();
  const int T = model.T();
  const int J = model.J();
  const int K = p.K;
  const std::size_t cell = static_cast<std::size_t>(i) * T + t;
  double* eta = &st.eta[p.s][cell * K];
  const int act = active_state(model, st, i, t);
  SmallMat Q = SmallMat::Zero(K, K);
  SmallVec b = SmallVec::Zero(K);
  if (act == p.s) {
    const auto& ps = spec.processes[p.s];
    const auto& lam = st.params.lambda[ps.measurement_set];
    const auto& nu = st.params.nu[ps.measurement_set];
    const auto& psi = st.params.psi_y[ps.residual_set];
    const double* y = &st.y[cell * J];
    for (int j = 0; j < J; ++j) {
      const double r = psi(j) * (y[j] - nu(j));
      for (int k = 0; k < K; ++k) {
        const double lk = lam(j, k);
        if (lk == 0.0) continue;
        b(k) += lk * r;
        for (int q = 0; q < K; ++q) Q(k, q) += lk * lam(j, q) * psi(j);
      }
    }
  }
  const Eigen::MatrixXd& P = *p.P;
  SmallVec ones = SmallVec::Ones(K);
  if (spec.ar_order == 0) {
    accumulate(Q, b, ones, P, SmallVec(*p.alpha));
  } else {
    SmallVec m(K);
    for (int k = 0; k < K; ++k) {
      const double a = p.a(i, k);
      m(k) = t == 0 ? a : a + p.B(i, t, k) * (p.e(i, t - 1, k) - p.c * a);
    }
    accumulate(Q, b, ones, P, m);
    if (t + 1 < T) {
      SmallVec d(K), z(K);
      for (int k = 0; k < K; ++k) {
        const double a = p.a(i, k);
        d(k) = p.B(i, t + 1, k);
        z(k) = p.e(i, t + 1, k) - a + p.c * d(k) * a;
      }
      accumulate(Q, b, d, P, z);
    }
  }
  SmallVec x;
  sample_gaussian(rs, Q, b, x, "eta");
  if (model.S() == 2 && p.s == 0 && act == 0 && t + 1 < T) {
    const int next = st.states[cell + 1];
    const double log_ratio = log_stay_term(st, x.data(), K, next) - log_stay_term(st, eta, K, next);
    const bool accept = log_ratio >= 0.0 || std::log(rs.uniform()) < log_ratio;
    adapt(st.factor_mh, accept, false);
    if (!accept) return;
  }
  for (int k = 0; k < K; ++k) eta[k] = x(k);
}

Eigen::MatrixXd draw_precision(RandomStream& rs, const DistributionParams& prior,
                               const Eigen::MatrixXd& scatter, double n, const std::string& label) {
  if (auto w = std::get_if<Wishart>(&prior))
    return sample(rs, Wishart{w->scale_inverse + scatter, w->df + n}, label);
  const auto& g = std::get<Gamma>(prior);
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = sample(rs, Gamma{g.shape + 0.5 * n, g.rate + 0.5 * scatter(0, 0)});
  return out;
}

const char* first_nonfinite(const Model& model, const ChainState& st, std::string& name) {
  const auto flat = flatten(model.index(), st.params);
  for (const auto& b : model.index().blocks)
    for (int k = 0; k < b.size(); ++k)
      if (!std::isfinite(flat[static_cast<std::size_t>(b.offset + k)])) {
        name = b.name;
        return name.c_str();
      }
  for (const auto& e : st.eta)
    for (double v : e)
      if (!std::isfinite(v)) return "eta";
  for (const auto& e : st.effects)
    for (double v : e)
      if (!std::isfinite(v)) return "random_effects";
  for (double v : st.time_effects)
    if (!std::isfinite(v)) return "time_effects";
  for (double v : st.y)
    if (!std::isfinite(v)) return "imputed_values";
  return nullptr;
}

double init_scalar(RandomStream& rs, const DistributionParams& prior, Role role) {
  if (auto u = std::get_if<Uniform>(&prior)) {
    const double x = sample(rs, *u);
    if (role != Role::Beta) return x;
    const double m = std::clamp(0.0, u->lower, u->upper);
    return m + 0.8 * (x - m);
  }
  if (auto g = std::get_if<Gamma>(&prior)) return sample(rs, *g);
  ScalarPrior sp = scalar_prior(prior);
  const double prec = std::max(sp.prec, 1.0);
  if (std::isinf(sp.lo) && std::isinf(sp.hi)) return sp.mean + rs.normal() / std::sqrt(prec);
  return draw_truncated(rs, sp.mean, prec, sp.lo, sp.hi);
}

}  // namespace

double AdaptiveStep::rate() const {
  if (proposed_after_burnin > 0)
    return static_cast<double>(accepted_after_burnin) / static_cast<double>(proposed_after_burnin);
  return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
}

Model::Model(ModelSpec spec, Dataset data)
    : spec_(std::move(spec)), data_(std::move(data)), index_(compile_index(spec_)) {
  std::vector<std::string> problems = validate_spec(spec_);
  for (auto& p : validate_dataset(data_)) problems.push_back(std::move(p));
  if (problems.empty())
    for (auto& p : validate_against_data(spec_, data_.n_patients, data_.n_times, data_.n_indicators))
      problems.push_back(std::move(p));
  if (!problems.empty()) throw ContractError(problems.front());
  means_.assign(data_.n_indicators, 0.0);
  for (int j = 0; j < data_.n_indicators; ++j) {
    double sum = 0.0;
    long n = 0;
    for (int i = 0; i < data_.n_patients; ++i)
      for (int t = 0; t < data_.n_times; ++t)
        if (data_.is_observed(i, t, j)) {
          sum += data_.value(i, t, j);
          ++n;
        }
    means_[j] = n > 0 ? sum / static_cast<double>(n) : 0.0;
  }
}

ChainState init_chain(const Model& model, std::uint64_t seed) {
  const ModelSpec& spec = model.spec();
  const int N = model.N(), T = model.T(), J = model.J();
  ChainState st;
  RandomStream base(seed);
  for (int k = 0; k < kStreamCount; ++k) st.streams.push_back(base.derive(static_cast<std::uint64_t>(k)));
  RandomStream& rs = st.streams[kInit];

  ModelParams& p = st.params;
  p = shaped_params(spec);
  for (const auto& b : model.index().blocks) {
    if (b.derived) continue;
    const DistributionParams& prior = spec.priors.at(b.prior_key);
    if (b.role == Role::Delta) continue;
    if (b.shape == Shape::SymMatrix) {
      Eigen::MatrixXd m = sample(rs, std::get<Wishart>(prior), b.name);
      (b.role == Role::PsiEta ? p.psi_eta[b.set] : p.psi_zeta2[b.set]) = m;
      continue;
    }
    std::vector<double> values(static_cast<std::size_t>(b.size()));
    for (auto& v : values) v = init_scalar(rs, prior, b.role);
    // Write through the flat layout so every role shares one code path.
    std::vector<double> flat = flatten(model.index(), p);
    std::copy(values.begin(), values.end(), flat.begin() + b.offset);
    unflatten(spec, model.index(), flat.data(), p);
  }
  if (spec.states.delta_constraint) {
    auto t = std::get<TruncNormal>(spec.priors.at("delta_alpha"));
    if (spec.states.delta_hierarchical)
      t.mean = 1.0 / std::sqrt(p.psi_eta[spec.processes[0].variance_set](0, 0));
    p.delta = draw_truncated(rs, t.mean, std::max(t.precision, 1.0), t.lower, t.upper);
  }
  apply_constraints(spec, p);

  const auto& means = model.indicator_means();
  st.y.resize(static_cast<std::size_t>(N) * T * J);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < J; ++j)
        st.y[model.data().cell(i, t, j)] =
            model.data().is_observed(i, t, j) ? model.data().value(i, t, j) : means[j];

  st.eta.resize(model.S());
  for (int s = 0; s < model.S(); ++s) {
    const int K = model.K(s);
    const auto& ps = spec.processes[s];
    std::vector<int> anchor(K, 0);
    if (!spec.observed) {
      const auto& pat = spec.measurement[ps.measurement_set];
      for (int k = 0; k < K; ++k)
        for (int j = 0; j < J; ++j)
          if (!pat.loadings[j][k].free && pat.loadings[j][k].value == 1.0 && !pat.intercepts[j].free) {
            anchor[k] = j;
            break;
          }
    }
    auto& e = st.eta[s];
    e.resize(static_cast<std::size_t>(N) * T * K);
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k)
          e[(static_cast<std::size_t>(i) * T + t) * K + k] = st.y[model.data().cell(i, t, anchor[k])];
  }
  st.effects.resize(spec.effect_groups.size());
  for (std::size_t g = 0; g < spec.effect_groups.size(); ++g)
    st.effects[g].assign(static_cast<std::size_t>(N) * group_dim(spec, static_cast<int>(g)), 0.0);
  st.time_effects.assign(T, 0.0);
  st.states.assign(static_cast<std::size_t>(N) * T, 0);
  st.b22_step.assign(spec.transition_slopes(), AdaptiveStep{});
  return st;
}

void impute_missing(const Model& model, ChainState& st) {
  const ModelSpec& spec = model.spec();
  if (spec.observed) return;
  const Dataset& d = model.data();
  RandomStream& rs = st.streams[kImpute];
  const int N = model.N(), T = model.T(), J = model.J();
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      const int s = active_state(model, st, i, t);
      const auto& ps = spec.processes[s];
      const int K = ps.n_factors;
      const auto& lam = st.params.lambda[ps.measurement_set];
      const auto& nu = st.params.nu[ps.measurement_set];
      const auto& psi = st.params.psi_y[ps.residual_set];
      const double* eta = &st.eta[s][(static_cast<std::size_t>(i) * T + t) * K];
      for (int j = 0; j < J; ++j) {
        if (d.is_observed(i, t, j)) continue;
        double m = nu(j);
        for (int k = 0; k < K; ++k) m += lam(j, k) * eta[k];
        st.y[d.cell(i, t, j)] = m + rs.normal() / std::sqrt(psi(j));
      }
    }
}

void update_latent_factors(const Model& model, ChainState& st) {
  RandomStream& rs = st.streams[kFactors];
  for (int s = 0; s < model.S(); ++s) {
    const Proc p = make_proc(model, st, s);
    for (int i = 0; i < model.N(); ++i)
      for (int t = 0; t < model.T(); ++t) {
        if (p.K == 1)
          update_factor_cell_scalar(model, st, p, i, t, rs);
        else
          update_factor_cell(model, st, p, i, t, rs);
      }
  }
}

void update_measurement(const Model& model, ChainState& st) {
  const ModelSpec& spec = model.spec();
  if (spec.observed) return;
  RandomStream& rs = st.streams[kMeasurement];
  const int N = model.N(), T = model.T(), J = model.J();
  const int M = static_cast<int>(spec.measurement.size());

  for (int m = 0; m < M; ++m) {
    const auto& pat = spec.measurement[m];
    const int K = pat.n_factors();
    ScalarPrior lam_prior, nu_prior;
    bool any_lambda = false, any_nu = false;
    for (int j = 0; j < J; ++j) {
      for (int k = 0; k < K; ++k) any_lambda |= pat.loadings[j][k].free;
      any_nu |= pat.intercepts[j].free;
    }
    if (any_lambda) lam_prior = scalar_prior(prior_of(model, Role::Lambda, m));
    if (any_nu) nu_prior = scalar_prior(prior_of(model, Role::Nu, m));

    for (int j = 0; j < J; ++j) {
      int free_k[kMaxFactors];
      int nf = 0;
      for (int k = 0; k < K; ++k)
        if (pat.loadings[j][k].free) free_k[nf++] = k;
      const bool nu_free = pat.intercepts[j].free;
      const int np = nf + (nu_free ? 1 : 0);
      if (np == 0) continue;
      SmallMat Q = SmallMat::Zero(np, np);
      SmallVec b = SmallVec::Zero(np);
      SmallVec x(np);
      auto& lam = st.params.lambda[m];
      auto& nu = st.params.nu[m];
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) {
          const int s = active_state(model, st, i, t);
          const auto& ps = spec.processes[s];
          if (ps.measurement_set != m) continue;
          const std::size_t cell = static_cast<std::size_t>(i) * T + t;
          const double* eta = &st.eta[s][cell * K];
          const double w = st.params.psi_y[ps.residual_set](j);
          double r = st.y[cell * J + j];
          if (!nu_free) r -= nu(j);
          for (int k = 0; k < K; ++k)
            if (!pat.loadings[j][k].free) r -= lam(j, k) * eta[k];
          int q = 0;
          if (nu_free) x(q++) = 1.0;
          for (int f = 0; f < nf; ++f) x(q++) = eta[free_k[f]];
          for (int a = 0; a < np; ++a) {
            b(a) += w * x(a) * r;
            for (int c = 0; c < np; ++c) Q(a, c) += w * x(a) * x(c);
          }
        }
      SmallVec lo(np), hi(np), cur(np);
      int q = 0;
      if (nu_free) {
        Q(q, q) += nu_prior.prec;
        b(q) += nu_prior.prec * nu_prior.mean;
        lo(q) = nu_prior.lo;
        hi(q) = nu_prior.hi;
        cur(q) = nu(j);
        ++q;
      }
      for (int f = 0; f < nf; ++f, ++q) {
        Q(q, q) += lam_prior.prec;
        b(q) += lam_prior.prec * lam_prior.mean;
        lo(q) = lam_prior.lo;
        hi(q) = lam_prior.hi;
        cur(q) = lam(j, free_k[f]);
      }
      sample_box_gaussian(rs, Q, b, lo, hi, cur, "lambda");
      q = 0;
      if (nu_free) nu(j) = cur(q++);
      for (int f = 0; f < nf; ++f) lam(j, free_k[f]) = cur(q++);
    }
  }

  for (int r = 0; r < spec.n_residual_sets; ++r) {
    const Gamma prior = std::get<Gamma>(prior_of(model, Role::PsiY, r));
    for (int j = 0; j < J; ++j) {
      double ss = 0.0;
      long n = 0;
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) {
          const int s = active_state(model, st, i, t);
          const auto& ps = spec.processes[s];
          if (ps.residual_set != r) continue;
          const int K = ps.n_factors;
          const std::size_t cell = static_cast<std::size_t>(i) * T + t;
          const double* eta = &st.eta[s][cell * K];
          const auto& lam = st.params.lambda[ps.measurement_set];
          double e = st.y[cell * J + j] - st.params.nu[ps.measurement_set](j);
          for (int k = 0; k < K; ++k) e -= lam(j, k) * eta[k];
          ss += e * e;
          ++n;
        }
      st.params.psi_y[r](j) =
          sample(rs, Gamma{prior.shape + 0.5 * static_cast<double>(n), prior.rate + 0.5 * ss});
    }
  }
}

namespace {

// Adds the AR likelihood of process p to the conditional of its intercept
// vector alpha + off (off shifts every factor equally).
void alpha_terms(const Proc& p, int N, double off, bool cross_sectional, SmallMat& Q, SmallVec& b) {
  const int K = p.K;
  SmallVec d(K), z(K);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < p.T; ++t) {
      for (int k = 0; k < K; ++k) {
        const double u = (p.icpt ? p.eff[i * p.dim + k] : 0.0) + off;
        if (t == 0 || cross_sectional) {
          d(k) = 1.0;
          z(k) = p.e(i, t, k) - u;
        } else {
          const double B = p.B(i, t, k);
          d(k) = 1.0 - p.c * B;
          z(k) = p.e(i, t, k) - B * p.e(i, t - 1, k) - u * d(k);
        }
      }
      accumulate(Q, b, d, *p.P, z);
    }
}

// Draws c and applies fixed += c, effects -= c along one direction. The
// person-specific coefficients (fixed + effect) are unchanged, so only the
// priors of the fixed parts and of the effects enter the conditional of c.
// This removes the strong posterior coupling between a fixed coefficient
// and the mean of its random effects.
struct Translation {
  double prec = 0.0;
  double lin = 0.0;
  double lo = -kInf;
  double hi = kInf;

  void add_prior(const ScalarPrior& pr, double current) {
    prec += pr.prec;
    lin += pr.prec * (pr.mean - current);
    lo = std::max(lo, pr.lo - current);
    hi = std::min(hi, pr.hi - current);
  }
  double draw(RandomStream& rs) const {
    if (!(lo < hi)) return 0.0;
    return draw_truncated(rs, lin / prec, prec, lo, hi);
  }
};

void translate_effects(const Model& model, ChainState& st, RandomStream& rs) {
  const ModelSpec& spec = model.spec();
  const int N = model.N(), T = model.T(), S = model.S();
  ModelParams& par = st.params;

  for (int g = 0; g < static_cast<int>(spec.effect_groups.size()); ++g) {
    const auto& eg = spec.effect_groups[g];
    const int dim = group_dim(spec, g);
    const Eigen::MatrixXd& Psi = par.psi_zeta2[g];
    auto& eff = st.effects[g];
    std::vector<int> users;
    for (int s = 0; s < S; ++s)
      if (spec.processes[s].effect_group == g) users.push_back(s);
    auto direction = [&](int d, auto&& fixed_part, Role role) {
      Translation tr;
      tr.prec = N * Psi(d, d);
      for (int i = 0; i < N; ++i)
        for (int q = 0; q < dim; ++q) tr.lin += Psi(d, q) * eff[static_cast<std::size_t>(i) * dim + q];
      for (int s : users) {
        if (role == Role::Alpha && s == 1 && spec.states.delta_constraint) continue;
        tr.add_prior(scalar_prior(prior_of(model, role, s)), fixed_part(s));
      }
      const double c = tr.draw(rs);
      for (int i = 0; i < N; ++i) eff[static_cast<std::size_t>(i) * dim + d] -= c;
      return c;
    };
    if (eg.intercept) {
      for (int k = 0; k < group_factors(spec, g); ++k) {
        const double c = direction(k, [&](int s) { return par.alpha[s](k); }, Role::Alpha);
        for (int s : users)
          if (!(s == 1 && spec.states.delta_constraint)) par.alpha[s](k) += c;
      }
      apply_constraints(spec, par);
    }
    if (eg.slope) {
      const double c = direction(dim - 1, [&](int s) { return par.beta[s](0); }, Role::Beta);
      for (int s : users) par.beta[s](0) += c;
    }
  }

  if (spec.has_time_slope()) {
    Translation tr;
    tr.prec = T * par.psi_zeta3;
    for (double w : st.time_effects) tr.lin += par.psi_zeta3 * w;
    for (int s = 0; s < S; ++s)
      if (spec.processes[s].time_slope) tr.add_prior(scalar_prior(prior_of(model, Role::Beta, s)), par.beta[s](0));
    const double c = tr.draw(rs);
    for (double& w : st.time_effects) w -= c;
    for (int s = 0; s < S; ++s)
      if (spec.processes[s].time_slope) par.beta[s](0) += c;
  }
}

}  // namespace

void update_structural(const Model& model, ChainState& st) {
  const ModelSpec& spec = model.spec();
  RandomStream& rs = st.streams[kStructural];
  const int N = model.N(), T = model.T(), S = model.S();
  const bool cross = spec.ar_order == 0;
  ModelParams& par = st.params;

  // Intercepts (factor means for cross-sectional models).
  for (int s = 0; s < S; ++s) {
    if (s == 1 && spec.states.delta_constraint) continue;
    const int K = model.K(s);
    const ScalarPrior pr = scalar_prior(prior_of(model, Role::Alpha, s));
    SmallMat Q = SmallMat::Zero(K, K);
    SmallVec b = SmallVec::Zero(K);
    alpha_terms(make_proc(model, st, s), N, 0.0, cross, Q, b);
    if (s == 0 && spec.states.delta_constraint) alpha_terms(make_proc(model, st, 1), N, -par.delta, cross, Q, b);
    SmallVec lo(K), hi(K), x(par.alpha[s]);
    for (int k = 0; k < K; ++k) {
      Q(k, k) += pr.prec;
      b(k) += pr.prec * pr.mean;
      lo(k) = pr.lo;
      hi(k) = pr.hi;
    }
    sample_box_gaussian(rs, Q, b, lo, hi, x, "alpha");
    par.alpha[s] = x;
  }

  if (spec.states.delta_constraint) {
    const auto tn = std::get<TruncNormal>(spec.priors.at("delta_alpha"));
    const double mean =
        spec.states.delta_hierarchical
            ? 1.0 / std::sqrt(par.psi_eta[spec.processes[0].variance_set](0, 0))
            : tn.mean;
    SmallMat Q = SmallMat::Zero(1, 1);
    SmallVec b = SmallVec::Zero(1);
    alpha_terms(make_proc(model, st, 1), N, 0.0, false, Q, b);
    // Conditional of a free state-2 intercept, rewritten in delta = alpha_S1 - alpha_S2.
    const double q = Q(0, 0) + tn.precision;
    const double lin = Q(0, 0) * par.alpha[0](0) - b(0) + tn.precision * mean;
    par.delta = draw_truncated(rs, lin / q, q, tn.lower, tn.upper);
    apply_constraints(spec, par);
  }

  if (cross) return;

  // AR coefficients.
  for (int s = 0; s < S; ++s) {
    const Proc p = make_proc(model, st, s);
    const int K = p.K;
    const ScalarPrior pr = scalar_prior(prior_of(model, Role::Beta, s));
    SmallMat Q = SmallMat::Zero(K, K);
    SmallVec b = SmallVec::Zero(K);
    SmallVec x(K), r(K);
    for (int i = 0; i < N; ++i)
      for (int t = 1; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
          const double a = p.a(i, k);
          const double extra = p.B(i, t, k) - (*p.beta)(k);
          x(k) = p.e(i, t - 1, k) - p.c * a;
          r(k) = p.e(i, t, k) - a - extra * x(k);
        }
        accumulate(Q, b, x, *p.P, r);
      }
    SmallVec lo(K), hi(K), cur(par.beta[s]);
    for (int k = 0; k < K; ++k) {
      Q(k, k) += pr.prec;
      b(k) += pr.prec * pr.mean;
      lo(k) = pr.lo;
      hi(k) = pr.hi;
    }
    sample_box_gaussian(rs, Q, b, lo, hi, cur, "beta");
    par.beta[s] = cur;
  }

  // Person effects: intercepts given slope, then slope given intercepts.
  for (int g = 0; g < static_cast<int>(spec.effect_groups.size()); ++g) {
    const auto& eg = spec.effect_groups[g];
    const int dim = group_dim(spec, g);
    const int nI = eg.intercept ? group_factors(spec, g) : 0;
    const Eigen::MatrixXd& Psi = par.psi_zeta2[g];
    std::vector<int> users;
    for (int s = 0; s < S; ++s)
      if (spec.processes[s].effect_group == g) users.push_back(s);
    auto& eff = st.effects[g];
    for (int i = 0; i < N; ++i) {
      double* e = &eff[static_cast<std::size_t>(i) * dim];
      if (nI > 0) {
        SmallMat Q(nI, nI);
        SmallVec b = SmallVec::Zero(nI);
        for (int r = 0; r < nI; ++r) {
          for (int c = 0; c < nI; ++c) Q(r, c) = Psi(r, c);
          if (eg.slope) b(r) -= Psi(r, dim - 1) * e[dim - 1];
        }
        SmallVec d(nI), z(nI);
        for (int s : users) {
          const Proc p = make_proc(model, st, s);
          for (int t = 0; t < T; ++t) {
            for (int k = 0; k < nI; ++k) {
              const double al = (*p.alpha)(k);
              if (t == 0) {
                d(k) = 1.0;
                z(k) = p.e(i, 0, k) - al;
              } else {
                const double B = p.B(i, t, k);
                d(k) = 1.0 - p.c * B;
                z(k) = p.e(i, t, k) - B * p.e(i, t - 1, k) - al * d(k);
              }
            }
            accumulate(Q, b, d, *p.P, z);
          }
        }
        SmallVec x;
        sample_gaussian(rs, Q, b, x, "random_effects");
        for (int k = 0; k < nI; ++k) e[k] = x(k);
      }
      if (eg.slope) {
        double q = Psi(dim - 1, dim - 1);
        double lin = 0.0;
        for (int k = 0; k < nI; ++k) lin -= Psi(dim - 1, k) * e[k];
        for (int s : users) {
          const Proc p = make_proc(model, st, s);
          const double P = (*p.P)(0, 0);
          const double a = p.a(i, 0);
          for (int t = 1; t < T; ++t) {
            const double x = p.e(i, t - 1, 0) - p.c * a;
            const double other = (*p.beta)(0) + (p.time ? p.w[t] : 0.0);
            const double r = p.e(i, t, 0) - a - other * x;
            q += x * x * P;
            lin += x * P * r;
          }
        }
        e[dim - 1] = lin / q + rs.normal() / std::sqrt(q);
      }
    }
  }

  // Time-specific slopes.
  if (spec.has_time_slope()) {
    const double psi3 = par.psi_zeta3;
    st.time_effects[0] = rs.normal() / std::sqrt(psi3);
    for (int t = 1; t < T; ++t) {
      double q = psi3, lin = 0.0;
      for (int s = 0; s < S; ++s) {
        if (!spec.processes[s].time_slope) continue;
        const Proc p = make_proc(model, st, s);
        const double P = (*p.P)(0, 0);
        for (int i = 0; i < N; ++i) {
          const double a = p.a(i, 0);
          const double x = p.e(i, t - 1, 0) - p.c * a;
          const double other = (*p.beta)(0) + (p.slope ? p.eff[i * p.dim + p.dim - 1] : 0.0);
          const double r = p.e(i, t, 0) - a - other * x;
          q += x * x * P;
          lin += x * P * r;
        }
      }
      st.time_effects[t] = lin / q + rs.normal() / std::sqrt(q);
    }
  }

  translate_effects(model, st, rs);
}

void update_covariances(const Model& model, ChainState& st) {
  const ModelSpec& spec = model.spec();
  RandomStream& rs = st.streams[kCovariances];
  const int N = model.N(), T = model.T(), S = model.S();
  ModelParams& par = st.params;

  for (int v = 0; v < spec.n_variance_sets; ++v) {
    int K = 1;
    double n = 0.0;
    Eigen::MatrixXd scatter;
    for (int s = 0; s < S; ++s) {
      if (spec.processes[s].variance_set != v) continue;
      const Proc p = make_proc(model, st, s);
      K = p.K;
      if (scatter.size() == 0) scatter = Eigen::MatrixXd::Zero(K, K);
      SmallVec z(K);
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) {
          for (int k = 0; k < K; ++k) {
            const double a = p.a(i, k);
            z(k) = p.e(i, t, k) - a;
            if (t > 0 && spec.ar_order == 1) z(k) -= p.B(i, t, k) * (p.e(i, t - 1, k) - p.c * a);
          }
          for (int r = 0; r < K; ++r)
            for (int c = 0; c < K; ++c) scatter(r, c) += z(r) * z(c);
          n += 1.0;
        }
    }
    const auto& prior = prior_of(model, Role::PsiEta, v);
    Eigen::MatrixXd proposal = draw_precision(rs, prior, scatter, n, "psi_eta");
    if (spec.states.delta_hierarchical && v == spec.processes[0].variance_set) {
      // delta_alpha's prior mean depends on this precision; correct the
      // conjugate proposal with an independence Metropolis step.
      const auto tn = std::get<TruncNormal>(spec.priors.at("delta_alpha"));
      auto log_f = [&](double psi) {
        return log_density(TruncNormal{1.0 / std::sqrt(psi), tn.precision, tn.lower, tn.upper}, par.delta);
      };
      const double log_ratio = log_f(proposal(0, 0)) - log_f(par.psi_eta[v](0, 0));
      const bool accept = log_ratio >= 0.0 || std::log(rs.uniform()) < log_ratio;
      adapt(st.variance_mh, accept, false);
      if (accept) par.psi_eta[v] = proposal;
    } else {
      par.psi_eta[v] = proposal;
    }
  }

  for (int g = 0; g < static_cast<int>(spec.effect_groups.size()); ++g) {
    const int dim = group_dim(spec, g);
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
    const auto& eff = st.effects[g];
    for (int i = 0; i < N; ++i)
      for (int r = 0; r < dim; ++r)
        for (int c = 0; c < dim; ++c)
          scatter(r, c) += eff[static_cast<std::size_t>(i) * dim + r] * eff[static_cast<std::size_t>(i) * dim + c];
    par.psi_zeta2[g] =
        draw_precision(rs, prior_of(model, Role::PsiZeta2, g), scatter, N, "psi_zeta2");
  }

  if (spec.has_time_slope()) {
    double ss = 0.0;
    for (double w : st.time_effects) ss += w * w;
    const Gamma prior = std::get<Gamma>(prior_of(model, Role::PsiZeta3, 0));
    par.psi_zeta3 = sample(rs, Gamma{prior.shape + 0.5 * T, prior.rate + 0.5 * ss});
  }
}

namespace {

double state_loglik(const Model& model, const ChainState& st, int s, int i, int t) {
  const ModelSpec& spec = model.spec();
  const auto& ps = spec.processes[s];
  const int K = ps.n_factors, J = model.J();
  const std::size_t cell = static_cast<std::size_t>(i) * model.T() + t;
  const double* eta = &st.eta[s][cell * K];
  const auto& lam = st.params.lambda[ps.measurement_set];
  const auto& nu = st.params.nu[ps.measurement_set];
  const auto& psi = st.params.psi_y[ps.residual_set];
  const double* y = &st.y[cell * J];
  double ll = 0.0;
  for (int j = 0; j < J; ++j) {
    double e = y[j] - nu(j);
    for (int k = 0; k < K; ++k) e -= lam(j, k) * eta[k];
    ll += 0.5 * std::log(psi(j)) - 0.5 * psi(j) * e * e;
  }
  return ll;
}

// log P(S_t = to | S_{t-1} = from) with the state-1 factor at t-1.
double log_transition(const Model& model, const ChainState& st, int i, int t, int from, int to) {
  if (from == 1) return to == 0 ? std::log(st.params.p21) : std::log1p(-st.params.p21);
  const int K1 = model.K(0);
  const double* eta1 = &st.eta[0][(static_cast<std::size_t>(i) * model.T() + t - 1) * K1];
  return log_stay_term(st, eta1, K1, to);
}

}  // namespace

void update_states(const Model& model, ChainState& st) {
  if (model.S() < 2) return;
  RandomStream& rs = st.streams[kStates];
  const int N = model.N(), T = model.T();
  for (int i = 0; i < N; ++i) {
    std::uint8_t* S = &st.states[static_cast<std::size_t>(i) * T];
    S[0] = 0;
    for (int t = 1; t < T; ++t) {
      double lw[2];
      for (int s = 0; s < 2; ++s) {
        lw[s] = log_transition(model, st, i, t, S[t - 1], s) + state_loglik(model, st, s, i, t);
        if (t + 1 < T) {
          const std::uint8_t keep = S[t];
          S[t] = static_cast<std::uint8_t>(s);
          lw[s] += log_transition(model, st, i, t + 1, s, S[t + 1]);
          S[t] = keep;
        }
      }
      const double mx = std::max(lw[0], lw[1]);
      const double p1 = std::exp(lw[1] - mx) / (std::exp(lw[0] - mx) + std::exp(lw[1] - mx));
      S[t] = rs.uniform() < p1 ? 1 : 0;
    }
  }
}

void update_transition_params(const Model& model, ChainState& st) {
  const ModelSpec& spec = model.spec();
  if (model.S() < 2) return;
  RandomStream& rs = st.streams[kTransition];
  ModelParams& par = st.params;
  const int N = model.N(), T = model.T(), K1 = model.K(0);

  std::vector<const double*> lagged;
  std::vector<std::uint8_t> stay;
  long n21 = 0, n22 = 0;
  for (int i = 0; i < N; ++i)
    for (int t = 1; t < T; ++t) {
      const std::size_t cell = static_cast<std::size_t>(i) * T + t;
      if (st.states[cell - 1] == 0) {
        lagged.push_back(&st.eta[0][(cell - 1) * K1]);
        stay.push_back(st.states[cell] == 0 ? 1 : 0);
      } else {
        (st.states[cell] == 0 ? n21 : n22) += 1;
      }
    }
  auto loglik = [&](double b21, const Eigen::VectorXd& b22) {
    double ll = 0.0;
    for (std::size_t n = 0; n < lagged.size(); ++n) {
      double x = b21;
      for (int k = 0; k < K1; ++k) x += b22(k) * lagged[n][k];
      ll += stay[n] ? log_sigmoid(x) : log_sigmoid(-x);
    }
    return ll;
  };

  double current = loglik(par.b21, par.b22);
  {
    const ScalarPrior pr = scalar_prior(spec.priors.at("b21"));
    const double prop = par.b21 + st.b21_step.scale * rs.normal();
    bool accept = false;
    if (prop >= pr.lo && prop <= pr.hi) {
      const double ll = loglik(prop, par.b22);
      const double log_ratio = ll + log_prior(pr, prop) - current - log_prior(pr, par.b21);
      accept = log_ratio >= 0.0 || std::log(rs.uniform()) < log_ratio;
      if (accept) {
        par.b21 = prop;
        current = ll;
      }
    }
    adapt(st.b21_step, accept, st.adapting);
  }
  const ScalarPrior pr22 = scalar_prior(spec.priors.at("b22"));
  for (int k = 0; k < K1; ++k) {
    Eigen::VectorXd prop = par.b22;
    double v = par.b22(k) + st.b22_step[k].scale * rs.normal();
    // Reflect at finite bounds so the proposal stays symmetric.
    for (int guard = 0; guard < 64 && (v < pr22.lo || v > pr22.hi); ++guard) {
      if (v < pr22.lo) v = 2.0 * pr22.lo - v;
      if (v > pr22.hi) v = 2.0 * pr22.hi - v;
    }
    bool accept = false;
    if (v >= pr22.lo && v <= pr22.hi) {
      prop(k) = v;
      const double ll = loglik(par.b21, prop);
      const double log_ratio = ll + log_prior(pr22, v) - current - log_prior(pr22, par.b22(k));
      accept = log_ratio >= 0.0 || std::log(rs.uniform()) < log_ratio;
      if (accept) {
        par.b22 = prop;
        current = ll;
      }
    }
    adapt(st.b22_step[k], accept, st.adapting);
  }

  if (!spec.states.p21_fixed) {
    const auto u = std::get<Uniform>(spec.priors.at("P21"));
    const double a = static_cast<double>(n21) + 1.0;
    const double b = static_cast<double>(n22) + 1.0;
    const double flo = boost::math::ibeta(a, b, u.lower);
    const double fhi = boost::math::ibeta(a, b, u.upper);
    double x;
    if (fhi - flo > 0.0) {
      const double target = flo + rs.uniform() * (fhi - flo);
      x = boost::math::ibeta_inv(a, b, target);
    } else {
      x = n21 > n22 ? u.upper : u.lower;
    }
    // Keep the value inside the open prior interval.
    const double eps = 1e-12 * (u.upper - u.lower);
    par.p21 = std::clamp(x, u.lower + eps, u.upper - eps);
  }
}

double transition_to_state2(const Model& model, const ChainState& st, int i, int t) {
  if (model.S() < 2 || t == 0) return 0.0;
  const std::size_t cell = static_cast<std::size_t>(i) * model.T() + t;
  if (st.states[cell - 1] == 1) return 1.0 - st.params.p21;
  const int K1 = model.K(0);
  return 1.0 - sigmoid(transition_logit(st, &st.eta[0][(cell - 1) * K1], K1));
}

void gibbs_sweep(const Model& model, ChainState& st, const UpdatePlan& plan) {
  ++st.iteration;
  try {
    if (plan.impute) impute_missing(model, st);
    if (plan.factors) update_latent_factors(model, st);
    if (plan.measurement) update_measurement(model, st);
    if (plan.structural) update_structural(model, st);
    if (plan.covariances) update_covariances(model, st);
    if (plan.states) update_states(model, st);
    if (plan.transition) update_transition_params(model, st);
  } catch (const LinearAlgebraError& e) {
    std::string block = e.what();
    block = block.substr(0, block.find(':'));
    throw SamplerError(block, st.iteration);
  }
  std::string name;
  if (const char* bad = first_nonfinite(model, st, name)) throw SamplerError(bad, st.iteration);
}

int DrawStore::column_index(const std::string& name) const {
  for (std::size_t k = 0; k < columns.size(); ++k)
    if (columns[k] == name) return static_cast<int>(k);
  return -1;
}

std::vector<double> DrawStore::column(int chain, int col) const {
  std::vector<double> out(static_cast<std::size_t>(n_draws));
  for (long d = 0; d < n_draws; ++d) out[static_cast<std::size_t>(d)] = at(chain, d, col);
  return out;
}

std::uint64_t chain_seed(std::uint64_t seed, int chain) {
  return RandomStream(seed).derive(0x5EEDULL + static_cast<std::uint64_t>(chain)).seed();
}

ChainDraws run_chain(const Model& model, const SamplerSettings& settings, int chain,
                     const UpdatePlan& plan, const ChainState* start) {
  const auto t0 = std::chrono::steady_clock::now();
  ChainDraws out;
  out.seed = chain_seed(settings.seed, chain);
  ChainState st = start ? *start : init_chain(model, out.seed);
  if (start) {
    RandomStream base(out.seed);
    for (int k = 0; k < kStreamCount; ++k) st.streams[k] = base.derive(static_cast<std::uint64_t>(k));
  }
  const long n_draws = settings.draws_per_chain();
  const int cols = model.index().n_columns;
  const std::size_t NT = static_cast<std::size_t>(model.N()) * model.T();
  out.draws.reserve(static_cast<std::size_t>(n_draws) * cols);
  if (model.S() == 2) {
    out.states.reserve(static_cast<std::size_t>(n_draws) * NT);
    out.transition_sum.assign(NT, 0.0);
  }
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (long k = 1; k <= settings.iterations; ++k) {
    st.adapting = k <= settings.burn_in;
    try {
      gibbs_sweep(model, st, plan);
    } catch (const SamplerError& e) {
      throw SamplerError(e.block(), e.iteration(), chain);
    }
    if (k <= settings.burn_in || (k - settings.burn_in) % settings.thinning != 0) continue;
    flatten(model.index(), st.params, row.data());
    out.draws.insert(out.draws.end(), row.begin(), row.end());
    if (model.S() == 2) {
      for (std::size_t c = 0; c < NT; ++c) out.states.push_back(static_cast<std::uint8_t>(st.states[c] + 1));
      for (int i = 0; i < model.N(); ++i)
        for (int t = 0; t < model.T(); ++t)
          out.transition_sum[static_cast<std::size_t>(i) * model.T() + t] += transition_to_state2(model, st, i, t);
    }
  }
  if (model.S() == 2) {
    out.acceptance["b21"] = st.b21_step.rate();
    for (int k = 0; k < static_cast<int>(st.b22_step.size()); ++k)
      out.acceptance[st.b22_step.size() == 1 ? "b22" : "b22[" + std::to_string(k + 1) + "]"] =
          st.b22_step[k].rate();
    out.acceptance["eta_transition"] = st.factor_mh.rate();
  }
  if (model.spec().states.delta_hierarchical && model.S() == 2)
    out.acceptance["psi_eta_delta"] = st.variance_mh.rate();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

DrawStore run_chains(const ModelConfig& config, const Dataset& data, const UpdatePlan& plan) {
  check_settings(config.sampler);
  const Model model(config.spec, data);
  const SamplerSettings& s = config.sampler;

  DrawStore store;
  store.columns = model.index().columns();
  store.n_draws = s.draws_per_chain();
  store.chains.resize(static_cast<std::size_t>(s.chains));
  store.seed = s.seed;
  store.spec_hash = hex64(fnv1a(serialize_config(config)));
  store.data_hash = hex64(fnv1a(format_dataset(data, Layout::Long)));
  store.iterations = s.iterations;
  store.burn_in = s.burn_in;
  store.thinning = s.thinning;
  store.n_patients = data.n_patients;
  store.n_times = data.n_times;
  store.n_indicators = data.n_indicators;
  store.n_states = config.spec.n_states();
  store.version = DSEMKIT_VERSION;
  store.config = serialize_config(config);
  store.patient_ids = data.patient_ids;
  store.time_ids = data.time_ids;

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(s.chains)));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(s.chains));
  if (workers <= 1) {
    for (int c = 0; c < s.chains; ++c) store.chains[c] = run_chain(model, s, c, plan);
    return store;
  }
  std::mutex mu;
  int next = 0;
  auto worker = [&]() {
    for (;;) {
      int c;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= s.chains) return;
        c = next++;
      }
      try {
        store.chains[c] = run_chain(model, s, c, plan);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return store;
}

}  // namespace dsemkit
