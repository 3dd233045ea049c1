#include "dsemkit/simulate.hpp"

#include "dsemkit/errors.hpp"
#include "dsemkit/rng.hpp"

#include <cmath>

namespace dsemkit {

namespace {

// Zero-mean Gaussian with precision P; infinite precision gives zero.
Eigen::VectorXd centered_draw(RandomStream& rs, const Eigen::MatrixXd& P) {
  const int d = static_cast<int>(P.rows());
  Eigen::VectorXd z(d);
  for (int k = 0; k < d; ++k) z(k) = rs.normal();
  if (d == 1) {
    z(0) = std::isinf(P(0, 0)) ? 0.0 : z(0) / std::sqrt(P(0, 0));
    return z;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P.inverse());
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * z;
}

double sd_of(double precision) { return std::isinf(precision) ? 0.0 : 1.0 / std::sqrt(precision); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SimOutput simulate(const ModelSpec& spec, const ModelParams& truth, const SimOptions& opts) {
  const int N = opts.n_patients, T = opts.n_times, J = spec.n_indicators;
  const int S = spec.n_states();
  if (N < 1 || T < 1) throw ContractError("simulate: n_patients and n_times must be positive");
  if (!(opts.missing_rate >= 0.0 && opts.missing_rate < 1.0))
    throw ContractError("simulate: missing_rate must lie in [0, 1)");
  if (opts.fixed_states && opts.fixed_states->size() != static_cast<std::size_t>(N) * T)
    throw ContractError("simulate: fixed state trajectory has the wrong size");
  for (const auto& p : validate_against_data(spec, N, T, J)) throw ContractError(p);

  RandomStream base(opts.seed);
  RandomStream rs_eff = base.derive(1), rs_time = base.derive(2), rs_state = base.derive(3),
               rs_eta = base.derive(4), rs_y = base.derive(5), rs_mask = base.derive(6);

  SimOutput out;
  out.effects.resize(spec.effect_groups.size());
  for (std::size_t g = 0; g < spec.effect_groups.size(); ++g) {
    const int dim = group_dim(spec, static_cast<int>(g));
    auto& e = out.effects[g];
    e.resize(static_cast<std::size_t>(N) * dim);
    for (int i = 0; i < N; ++i) {
      const Eigen::VectorXd u = centered_draw(rs_eff, truth.psi_zeta2[g]);
      for (int d = 0; d < dim; ++d) e[static_cast<std::size_t>(i) * dim + d] = u(d);
    }
  }
  out.time_effects.assign(T, 0.0);
  if (spec.has_time_slope())
    for (int t = 0; t < T; ++t) out.time_effects[t] = rs_time.normal() * sd_of(truth.psi_zeta3);

  const double c = spec.centering ? 1.0 : 0.0;
  auto intercept = [&](int s, int i, int k) {
    const auto& ps = spec.processes[s];
    double a = truth.alpha[s](k);
    if (ps.effect_group >= 0 && spec.effect_groups[ps.effect_group].intercept)
      a += out.effects[ps.effect_group][static_cast<std::size_t>(i) * group_dim(spec, ps.effect_group) + k];
    return a;
  };
  auto slope = [&](int s, int i, int t, int k) {
    const auto& ps = spec.processes[s];
    double b = truth.beta[s](k);
    if (ps.effect_group >= 0 && spec.effect_groups[ps.effect_group].slope) {
      const int dim = group_dim(spec, ps.effect_group);
      b += out.effects[ps.effect_group][static_cast<std::size_t>(i) * dim + dim - 1];
    }
    if (ps.time_slope) b += out.time_effects[t];
    return b;
  };

  for (int s = 0; s < S; ++s) {
    const auto& ps = spec.processes[s];
    if (ps.effect_group >= 0 && spec.effect_groups[ps.effect_group].slope) {
      int unstable = 0;
      for (int i = 0; i < N; ++i)
        if (std::abs(slope(s, i, 0, 0) - (ps.time_slope ? out.time_effects[0] : 0.0)) >= 1.0) ++unstable;
      if (unstable > 0)
        out.warnings.push_back("nonstationary: " + std::to_string(unstable) +
                               " patient(s) with |beta_i| >= 1 in state " + std::to_string(s + 1));
    }
  }

  out.eta.resize(S);
  for (int s = 0; s < S; ++s) out.eta[s].assign(static_cast<std::size_t>(N) * T * spec.processes[s].n_factors, 0.0);
  out.states.assign(static_cast<std::size_t>(N) * T, 0);

  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      const std::size_t cell = static_cast<std::size_t>(i) * T + t;
      if (S == 2 && t > 0) {
        std::uint8_t st;
        if (opts.fixed_states) {
          st = (*opts.fixed_states)[cell];
        } else if (out.states[cell - 1] == 0) {
          const int K1 = spec.processes[0].n_factors;
          double x = truth.b21;
          for (int k = 0; k < K1; ++k) x += truth.b22(k) * out.eta[0][(cell - 1) * K1 + k];
          st = rs_state.uniform() < sigmoid(x) ? 0 : 1;
        } else {
          st = rs_state.uniform() < truth.p21 ? 0 : 1;
        }
        out.states[cell] = st;
      } else if (S == 2 && opts.fixed_states) {
        out.states[cell] = (*opts.fixed_states)[cell];
      }
      for (int s = 0; s < S; ++s) {
        const auto& ps = spec.processes[s];
        const int K = ps.n_factors;
        const Eigen::VectorXd z = centered_draw(rs_eta, truth.psi_eta[ps.variance_set]);
        double* eta = &out.eta[s][cell * K];
        for (int k = 0; k < K; ++k) {
          const double a = intercept(s, i, k);
          double m = a;
          if (spec.ar_order == 1 && t > 0) m += slope(s, i, t, k) * (eta[k - K] - c * a);
          eta[k] = m + z(k);
        }
      }
    }

  Dataset d = Dataset::empty(N, T, J);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      const std::size_t cell = static_cast<std::size_t>(i) * T + t;
      const int s = out.states[cell];
      const auto& ps = spec.processes[s];
      const int K = ps.n_factors;
      const double* eta = &out.eta[s][cell * K];
      for (int j = 0; j < J; ++j) {
        double y;
        if (spec.observed) {
          y = eta[0];
        } else {
          y = truth.nu[ps.measurement_set](j);
          for (int k = 0; k < K; ++k) y += truth.lambda[ps.measurement_set](j, k) * eta[k];
          y += rs_y.normal() * sd_of(truth.psi_y[ps.residual_set](j));
        }
        d.set(i, t, j, y);
      }
    }
  if (opts.missing_rate > 0.0) {
    for (int i = 0; i < N; ++i) {
      bool any = false;
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < J; ++j) {
          if (rs_mask.uniform() < opts.missing_rate)
            d.mask(i, t, j);
          else
            any = true;
        }
      if (!any) {
        // Keep at least one observed cell per patient.
        const std::size_t cell = static_cast<std::size_t>(i) * T;
        const int s = out.states[cell];
        const auto& ps = spec.processes[s];
        double y = spec.observed ? out.eta[s][cell * ps.n_factors]
                                 : truth.nu[ps.measurement_set](0);
        if (!spec.observed)
          for (int k = 0; k < ps.n_factors; ++k)
            y += truth.lambda[ps.measurement_set](0, k) * out.eta[s][cell * ps.n_factors + k];
        d.set(i, 0, 0, y);
      }
    }
  }
  out.data = std::move(d);
  return out;
}

IndicatorMoments stationary_moments(const ModelSpec& spec, const ModelParams& truth) {
  const auto& ps = spec.processes[0];
  const int K = ps.n_factors, J = spec.n_indicators;
  Eigen::MatrixXd within = truth.psi_eta[ps.variance_set].inverse();
  if (std::isinf(truth.psi_eta[ps.variance_set](0, 0)) && K == 1) within(0, 0) = 0.0;
  Eigen::MatrixXd cov = within;
  if (spec.ar_order == 1) {
    for (int r = 0; r < K; ++r) {
      if (std::abs(truth.beta[0](r)) >= 1.0)
        throw ContractError("stationary_moments: |beta| >= 1 has no stationary distribution");
    }
    for (int r = 0; r < K; ++r)
      for (int q = 0; q < K; ++q) cov(r, q) = within(r, q) / (1.0 - truth.beta[0](r) * truth.beta[0](q));
  }
  IndicatorMoments m;
  m.factor_variance = cov(0, 0);
  if (ps.effect_group >= 0 && spec.effect_groups[ps.effect_group].intercept) {
    const Eigen::MatrixXd between = truth.psi_zeta2[ps.effect_group].inverse();
    cov += between.topLeftCorner(K, K);
  }
  m.mean.resize(J);
  m.variance.resize(J);
  for (int j = 0; j < J; ++j) {
    if (spec.observed) {
      m.mean[j] = truth.alpha[0](0);
      m.variance[j] = cov(0, 0);
      continue;
    }
    const Eigen::VectorXd l = truth.lambda[ps.measurement_set].row(j).transpose();
    m.mean[j] = truth.nu[ps.measurement_set](j) + l.dot(truth.alpha[0]);
    const double psi = truth.psi_y[ps.residual_set](j);
    m.variance[j] = l.dot(cov * l) + (std::isinf(psi) ? 0.0 : 1.0 / psi);
  }
  return m;
}

nlohmann::json sim_truth_json(const ModelSpec& spec, const ModelParams& truth, const SimOutput& out) {
  nlohmann::json j;
  j["params"] = truth_to_json(spec, truth);
  nlohmann::json eta = nlohmann::json::array();
  for (const auto& e : out.eta) eta.push_back(e);
  j["latent"]["eta"] = eta;
  nlohmann::json eff = nlohmann::json::array();
  for (const auto& e : out.effects) eff.push_back(e);
  j["latent"]["random_effects"] = eff;
  j["latent"]["time_effects"] = out.time_effects;
  std::vector<int> states(out.states.begin(), out.states.end());
  for (auto& s : states) s += 1;
  j["latent"]["states"] = states;
  j["dims"] = {{"n_patients", out.data.n_patients},
               {"n_times", out.data.n_times},
               {"n_indicators", out.data.n_indicators}};
  j["warnings"] = out.warnings;
  return j;
}

}  // namespace dsemkit
