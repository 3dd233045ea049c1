#include "doctest.h"

#include "dsemkit/errors.hpp"
#include "dsemkit/ladder.hpp"
#include "dsemkit/sampler.hpp"
#include "dsemkit/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dsemkit;

namespace {

UpdatePlan only(bool UpdatePlan::*field) {
  UpdatePlan p{false, false, false, false, false, false, false};
  p.*field = true;
  return p;
}

ModelParams truth_of(const ModelSpec& spec, const char* json_text) {
  return parse_truth(spec, nlohmann::json::parse(json_text)).params;
}

const char* kDsemTruth = R"({"alpha": -0.3, "beta": 0.7, "sigma2_eta": 0.07, "lambda": [0.9, 1.36],
  "nu": [0.05, 0.10], "Sigma_zeta2": [[0.4, 0.1], [0.1, 0.09]], "sigma2_y": [0.28, 0.33, 0.26]})";

const char* kSuddenGainTruth = R"({"P21": 0.02, "b21": 0.9, "b22": 0.46, "alpha_S1": 0.0,
  "delta_alpha": 1.0, "beta_S1": 0.3, "beta_S2": 0.3, "sigma2_eta": 0.1, "lambda": [0.9, 1.2],
  "nu": [0.0, 0.0], "Sigma_zeta2": [[0.2, 0.0], [0.0, 0.01]], "sigma2_y": [0.1, 0.1, 0.1]})";

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= xs.size() - 1;
  return m;
}

}  // namespace

TEST_CASE("init_chain is deterministic in the seed") {
  const ModelSpec spec = build_dsem(3);
  SimOptions o;
  o.n_patients = 8;
  o.n_times = 6;
  const auto sim = simulate(spec, truth_of(spec, kDsemTruth), o);
  const Model model(spec, sim.data);
  const ChainState a = init_chain(model, 123), b = init_chain(model, 123), c = init_chain(model, 124);
  CHECK(flatten(model.index(), a.params) == flatten(model.index(), b.params));
  CHECK(a.eta == b.eta);
  CHECK(a.effects == b.effects);
  CHECK(a.y == b.y);
  CHECK(flatten(model.index(), a.params) != flatten(model.index(), c.params));
}

TEST_CASE("model construction rejects mismatched data") {
  const ModelSpec spec = build_dsem(3);
  CHECK_THROWS_AS(Model(spec, Dataset::empty(3, 4, 2)), ContractError);
  Dataset d = Dataset::empty(2, 1, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) d.set(i, 0, j, 0.1 * j);
  CHECK_THROWS_AS(Model(build_cross_classified(3), d), ContractError);
}

TEST_CASE("stored draw count follows iterations, burn-in and thinning") {
  const ModelSpec spec = build_ar1_observed();
  SimOptions o;
  o.n_patients = 1;
  o.n_times = 30;
  const auto sim = simulate(spec, truth_of(spec, R"({"alpha": 0, "beta": 0.65, "sigma2_y": 0.5})"), o);
  ModelConfig cfg;
  cfg.spec = spec;
  cfg.sampler.chains = 1;
  cfg.sampler.iterations = 10;
  cfg.sampler.burn_in = 5;
  const DrawStore store = run_chains(cfg, sim.data);
  CHECK(store.n_draws == 5);
  CHECK(store.chains.at(0).draws.size() == 5u * store.columns.size());

  cfg.sampler.iterations = 25;
  cfg.sampler.thinning = 4;
  CHECK(run_chains(cfg, sim.data).n_draws == 5);
  CHECK(SamplerSettings{}.draws_per_chain() * SamplerSettings{}.chains == 20000);
}

TEST_CASE("same seed gives identical draws; chains depend only on their seed") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  SimOptions o;
  o.n_patients = 6;
  o.n_times = 8;
  const auto sim = simulate(spec, truth_of(spec, kSuddenGainTruth), o);
  ModelConfig cfg;
  cfg.spec = spec;
  cfg.sampler.chains = 3;
  cfg.sampler.iterations = 60;
  cfg.sampler.burn_in = 20;
  cfg.sampler.seed = 77;
  const DrawStore a = run_chains(cfg, sim.data), b = run_chains(cfg, sim.data);
  for (int c = 0; c < 3; ++c) {
    CHECK(a.chains[c].draws == b.chains[c].draws);
    CHECK(a.chains[c].states == b.chains[c].states);
    CHECK(a.chains[c].transition_sum == b.chains[c].transition_sum);
    CHECK(a.chains[c].seed == chain_seed(77, c));
  }
  CHECK(a.chains[0].draws != a.chains[1].draws);
  const Model model(spec, sim.data);
  const ChainDraws solo = run_chain(model, cfg.sampler, 2);
  CHECK(solo.draws == a.chains[2].draws);
}

TEST_CASE("Wishart update of person-effect precision matches the conjugate posterior") {
  const ModelSpec spec = build_two_level(1, true);
  const int N = 5000;
  Dataset d = Dataset::empty(N, 2, 1);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < 2; ++t) d.set(i, t, 0, 0.0);
  const Model model(spec, d);
  ChainState st = init_chain(model, 5);

  Eigen::Matrix2d sigma;
  sigma << 0.3, 0.05, 0.05, 0.1;
  const Eigen::LLT<Eigen::Matrix2d> chol(sigma);
  RandomStream rs(99);
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (int i = 0; i < N; ++i) {
    const Eigen::Vector2d z(rs.normal(), rs.normal());
    const Eigen::Vector2d u = chol.matrixL() * z;
    st.effects[0][2 * i] = u(0);
    st.effects[0][2 * i + 1] = u(1);
    scatter += u * u.transpose();
  }
  // Posterior precision ~ Wishart(R + S, 2 + N); E[Sigma] = (R + S) / (2 + N - 3).
  const Eigen::Matrix2d oracle = (Eigen::Matrix2d::Identity() + scatter) / (N + 2.0 - 3.0);
  Eigen::Matrix2d mean = Eigen::Matrix2d::Zero();
  const int n = 2000;
  for (int k = 0; k < n; ++k) {
    update_covariances(model, st);
    mean += st.params.psi_zeta2[0].inverse();
  }
  mean /= n;
  CHECK((mean - sigma).cwiseAbs().maxCoeff() < 0.02);
  CHECK((mean - oracle).cwiseAbs().maxCoeff() < 0.002);
}

TEST_CASE("static factor scores follow the Bayesian factor-score posterior") {
  const ModelSpec spec = build_cfa(1, 3);
  Dataset d = Dataset::empty(2, 1, 3);
  const double y[2][3] = {{0.8, 1.1, 0.2}, {-0.4, -0.9, 0.1}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) d.set(i, 0, j, y[i][j]);
  const Model model(spec, d);
  ChainState st = init_chain(model, 3);
  ModelParams& p = st.params;
  p.lambda[0] << 1.0, 0.7, 1.4;
  p.nu[0] << 0.0, 0.2, -0.3;
  p.psi_y[0] << 2.0, 4.0, 1.0;
  p.alpha[0] << 0.25;
  p.psi_eta[0] << 1.5;

  const Eigen::Vector3d lam(1.0, 0.7, 1.4), nu(0.0, 0.2, -0.3), psi(2.0, 4.0, 1.0);
  const double prec = 1.5 + (lam.array().square() * psi.array()).sum();
  const double mean = (1.5 * 0.25 + (lam.array() * psi.array() * (Eigen::Vector3d(0.8, 1.1, 0.2) - nu).array()).sum()) / prec;

  std::vector<double> draws;
  for (int k = 0; k < 20000; ++k) {
    gibbs_sweep(model, st, only(&UpdatePlan::factors));
    draws.push_back(st.eta[0][0]);
  }
  const Moments m = moments(draws);
  CHECK(std::abs(m.mean - mean) < 4.0 * std::sqrt(1.0 / prec / draws.size()));
  CHECK(m.var == doctest::Approx(1.0 / prec).epsilon(0.04));
}

TEST_CASE("with beta = 0 an interior factor ignores its neighbours") {
  const ModelSpec spec = build_ar1_latent(2);
  Dataset d = Dataset::empty(1, 3, 2);
  const double y[3][2] = {{5.0, 4.0}, {0.3, 0.6}, {-6.0, -5.0}};
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 2; ++j) d.set(0, t, j, y[t][j]);
  const Model model(spec, d);
  ChainState st = init_chain(model, 8);
  st.params.alpha[0] << 0.1;
  st.params.beta[0] << 0.0;
  st.params.psi_eta[0] << 2.0;
  st.params.lambda[0] << 1.0, 0.8;
  st.params.nu[0] << 0.0, 0.1;
  st.params.psi_y[0] << 3.0, 5.0;

  const double prec = 2.0 + 1.0 * 3.0 + 0.64 * 5.0;
  const double mean = (2.0 * 0.1 + 3.0 * 0.3 + 0.8 * 5.0 * (0.6 - 0.1)) / prec;
  std::vector<double> draws;
  for (int k = 0; k < 20000; ++k) {
    gibbs_sweep(model, st, only(&UpdatePlan::factors));
    draws.push_back(st.eta[0][1]);
  }
  const Moments m = moments(draws);
  CHECK(std::abs(m.mean - mean) < 4.0 * std::sqrt(1.0 / prec / draws.size()));
  CHECK(m.var == doctest::Approx(1.0 / prec).epsilon(0.04));
}

TEST_CASE("imputation: no-op on complete data, measurement draw for a decoupled indicator") {
  const ModelSpec spec = build_ar1_latent(2);
  SimOptions o;
  o.n_patients = 1;
  o.n_times = 20;
  const auto sim = simulate(
      spec, truth_of(spec, R"({"alpha": 0, "beta": 0.5, "sigma2_eta": 0.5, "lambda": [0.8], "nu": [0.1], "sigma2_y": [0.3, 0.4]})"),
      o);
  {
    const Model model(spec, sim.data);
    ChainState st = init_chain(model, 1);
    const auto before = st.y;
    impute_missing(model, st);
    CHECK(st.y == before);
  }
  Dataset masked = sim.data;
  masked.mask(0, 4, 1);
  const Model model(spec, masked);
  ChainState st = init_chain(model, 1);
  st.params.lambda[0](1, 0) = 0.0;
  st.params.nu[0](1) = 0.7;
  st.params.psi_y[0](1) = 4.0;
  std::vector<double> draws;
  for (int k = 0; k < 20000; ++k) {
    impute_missing(model, st);
    draws.push_back(st.y[masked.cell(0, 4, 1)]);
  }
  const Moments m = moments(draws);
  CHECK(std::abs(m.mean - 0.7) < 4.0 * 0.5 / std::sqrt(20000.0));
  CHECK(m.var == doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("P21 = 0 makes state 2 absorbing and S_i1 stays 1") {
  StateOptions opts;
  opts.p21_fixed = 0.0;
  const ModelSpec spec = build_dlcsem_sudden_gain(3, opts);
  ModelParams truth = truth_of(build_dlcsem_sudden_gain(3), kSuddenGainTruth);
  truth.p21 = 0.0;
  SimOptions o;
  o.n_patients = 10;
  o.n_times = 10;
  const auto sim = simulate(spec, truth, o);
  const Model model(spec, sim.data);
  ChainState st = init_chain(model, 4);
  for (int k = 0; k < 300; ++k) {
    gibbs_sweep(model, st);
    for (int i = 0; i < model.N(); ++i) {
      REQUIRE(st.states[static_cast<std::size_t>(i) * model.T()] == 0);
      for (int t = 1; t < model.T(); ++t) {
        const std::size_t c = static_cast<std::size_t>(i) * model.T() + t;
        REQUIRE_FALSE((st.states[c - 1] == 1 && st.states[c] == 0));
      }
    }
  }
}

TEST_CASE("with nobody in state 2, P21 is drawn from its uniform prior") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  ModelParams truth = truth_of(spec, kSuddenGainTruth);
  SimOptions o;
  o.n_patients = 5;
  o.n_times = 6;
  o.fixed_states = std::vector<std::uint8_t>(30, 0);
  const auto sim = simulate(spec, truth, o);
  const Model model(spec, sim.data);
  ChainState st = init_chain(model, 12);
  std::fill(st.states.begin(), st.states.end(), 0);
  std::vector<double> draws;
  for (int k = 0; k < 5000; ++k) {
    gibbs_sweep(model, st, only(&UpdatePlan::transition));
    draws.push_back(st.params.p21);
  }
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  const double n = static_cast<double>(draws.size());
  for (std::size_t k = 0; k < draws.size(); ++k) {
    REQUIRE(draws[k] > 0.0);
    REQUIRE(draws[k] < 0.1);
    const double f = draws[k] / 0.1;
    ks = std::max({ks, (k + 1) / n - f, f - k / n});
  }
  CHECK(ks < 0.03);
}

TEST_CASE("logistic transition parameters are recovered from simulated exits") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  const ModelParams truth = truth_of(spec, kSuddenGainTruth);
  SimOptions o;
  o.n_patients = 3000;
  o.n_times = 10;
  o.seed = 21;
  const auto sim = simulate(spec, truth, o);
  const Model model(spec, sim.data);
  ChainState st = init_chain(model, 2);
  st.params = truth;
  st.params.b21 = 0.0;
  st.params.b22.setConstant(0.1);
  st.eta = sim.eta;
  st.effects = sim.effects;
  st.states = sim.states;
  long exposures = 0;
  for (int i = 0; i < o.n_patients; ++i)
    for (int t = 1; t < o.n_times; ++t) exposures += sim.states[static_cast<std::size_t>(i) * o.n_times + t - 1] == 0;
  CHECK(exposures > 9000);

  double b21 = 0.0, b22 = 0.0;
  const int burn = 1000, n = 4000;
  for (int k = 0; k < burn + n; ++k) {
    st.adapting = k < burn;
    gibbs_sweep(model, st, only(&UpdatePlan::transition));
    if (k >= burn) {
      b21 += st.params.b21;
      b22 += st.params.b22(0);
    }
  }
  CHECK(std::abs(b21 / n - 0.9) < 0.1);
  CHECK(std::abs(b22 / n - 0.46) < 0.1);
  CHECK(st.b21_step.rate() > 0.2);
}

TEST_CASE("constraints hold along a full two-state run") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  SimOptions o;
  o.n_patients = 12;
  o.n_times = 10;
  const auto sim = simulate(spec, truth_of(spec, kSuddenGainTruth), o);
  const Model model(spec, sim.data);
  ChainState st = init_chain(model, 31);
  for (int k = 0; k < 500; ++k) {
    gibbs_sweep(model, st);
    const auto& p = st.params;
    REQUIRE(p.delta >= 0.0);
    REQUIRE(p.alpha[1](0) <= p.alpha[0](0));
    REQUIRE(p.alpha[1](0) == doctest::Approx(p.alpha[0](0) - p.delta));
    REQUIRE(p.b22(0) >= 0.0);
    REQUIRE(p.p21 > 0.0);
    REQUIRE(p.p21 < 0.1);
    for (int s = 0; s < 2; ++s) {
      REQUIRE(p.beta[s](0) >= 0.0);
      REQUIRE(p.beta[s](0) <= 1.0);
    }
    REQUIRE(Eigen::LLT<Eigen::MatrixXd>(p.psi_zeta2[0]).info() == Eigen::Success);
  }
}

TEST_CASE("non-finite parameters stop the sweep with the block named") {
  const ModelSpec spec = build_dsem(3);
  SimOptions o;
  o.n_patients = 4;
  o.n_times = 5;
  const auto sim = simulate(spec, truth_of(spec, kDsemTruth), o);
  const Model model(spec, sim.data);
  ChainState st = init_chain(model, 1);
  st.params.lambda[0](1, 0) = std::numeric_limits<double>::quiet_NaN();
  UpdatePlan plan = only(&UpdatePlan::covariances);
  try {
    gibbs_sweep(model, st, plan);
    FAIL("expected a sampler error");
  } catch (const SamplerError& e) {
    CHECK(e.block() == "lambda");
    CHECK(e.iteration() == 1);
    CHECK(e.kind() == ErrorKind::Numeric);
  }
}

TEST_CASE("10% MCAR inflates posterior SDs by less than 20%") {
  const ModelSpec spec = build_dsem(3);
  SimOptions o;
  o.n_patients = 57;
  o.n_times = 15;
  o.seed = 4;
  const auto full = simulate(spec, truth_of(spec, kDsemTruth), o);
  o.missing_rate = 0.1;
  const auto holey = simulate(spec, truth_of(spec, kDsemTruth), o);
  REQUIRE(holey.data.n_observed() < full.data.n_observed());
  for (std::size_t c = 0; c < holey.data.values.size(); ++c)
    if (holey.data.observed[c]) REQUIRE(holey.data.values[c] == full.data.values[c]);

  ModelConfig cfg;
  cfg.spec = spec;
  cfg.sampler.chains = 2;
  cfg.sampler.iterations = 8000;
  cfg.sampler.burn_in = 2000;
  const DrawStore a = run_chains(cfg, full.data), b = run_chains(cfg, holey.data);
  auto pooled_sd = [](const DrawStore& s, int c) {
    std::vector<double> all;
    for (int ch = 0; ch < s.n_chains(); ++ch) {
      const auto v = s.column(ch, c);
      all.insert(all.end(), v.begin(), v.end());
    }
    return std::sqrt(moments(all).var);
  };
  for (const char* name : {"alpha", "beta", "lambda[2]", "lambda[3]", "nu[2]", "nu[3]", "psi_y[1]", "psi_y[2]", "psi_y[3]"}) {
    CAPTURE(name);
    const int c = a.column_index(name);
    REQUIRE(c >= 0);
    CHECK(pooled_sd(b, c) / pooled_sd(a, c) < 1.2);
  }
}
