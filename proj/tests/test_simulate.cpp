#include "doctest.h"

#include "dsemkit/errors.hpp"
#include "dsemkit/ladder.hpp"
#include "dsemkit/simulate.hpp"

#include <cmath>

using namespace dsemkit;

namespace {

ModelParams truth_of(const ModelSpec& spec, const char* json_text) {
  return parse_truth(spec, nlohmann::json::parse(json_text)).params;
}

}  // namespace

TEST_CASE("noise-free AR(1) reproduces intercepts exactly") {
  const ModelSpec spec = build_dsem(3);
  ModelParams p = truth_of(spec, R"({"alpha": 0.4, "beta": 0.0, "sigma2_eta": 1.0, "lambda": [1.0, 1.0],
      "nu": [0.5, -0.2], "Sigma_zeta2": [[0.3, 0.0], [0.0, 0.1]], "sigma2_y": [1, 1, 1]})");
  p.psi_eta[0](0, 0) = std::numeric_limits<double>::infinity();
  p.psi_y[0].setConstant(std::numeric_limits<double>::infinity());
  p.psi_zeta2[0](1, 1) = 1e300;
  p.psi_zeta2[0](0, 1) = p.psi_zeta2[0](1, 0) = 0.0;
  SimOptions o;
  o.n_patients = 5;
  o.n_times = 6;
  const auto out = simulate(spec, p, o);
  for (int i = 0; i < 5; ++i) {
    const double a_i = 0.4 + out.effects[0][2 * i];
    for (int t = 0; t < 6; ++t) {
      CHECK(out.data.value(i, t, 0) == doctest::Approx(a_i));
      CHECK(out.data.value(i, t, 1) == doctest::Approx(0.5 + a_i));
      CHECK(out.data.value(i, t, 2) == doctest::Approx(-0.2 + a_i));
    }
  }
}

TEST_CASE("a two-state spec that never leaves state 1 stays there") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  ModelParams p = truth_of(spec, R"({"P21": 0.02, "b21": 50.0, "b22": 0.0, "alpha_S1": 0.0,
      "delta_alpha": 1.0, "beta_S1": 0.3, "beta_S2": 0.3, "sigma2_eta": 0.1, "lambda": [0.9, 1.2],
      "nu": [0.0, 0.0], "Sigma_zeta2": [[0.2, 0.0], [0.0, 0.01]], "sigma2_y": [0.1, 0.1, 0.1]})");
  SimOptions o;
  o.n_patients = 40;
  o.n_times = 15;
  const auto out = simulate(spec, p, o);
  for (auto s : out.states) CHECK(s == 0);
}

TEST_CASE("stationary moments of the latent process") {
  const ModelSpec spec = build_ar1_latent(2);
  ModelParams p = truth_of(spec, R"({"alpha": 0.0, "beta": 0.0, "sigma2_eta": 0.64, "lambda": [1.0],
      "nu": [0.0], "sigma2_y": [0.1, 0.1]})");
  CHECK(stationary_moments(spec, p).factor_variance == doctest::Approx(0.64));
  p.beta[0](0) = 0.6;
  const auto m = stationary_moments(spec, p);
  CHECK(m.factor_variance == doctest::Approx(1.0));
  CHECK(m.variance[1] == doctest::Approx(1.0 + 0.1));
  p.beta[0](0) = 1.0;
  CHECK_THROWS_AS(stationary_moments(spec, p), ContractError);
}

TEST_CASE("simulated panel matches its stationary moments") {
  const ModelSpec spec = build_ar1_latent(2);
  const ModelParams p = truth_of(spec, R"({"alpha": 0.5, "beta": 0.6, "sigma2_eta": 0.64, "lambda": [0.8],
      "nu": [0.2], "sigma2_y": [0.3, 0.2]})");
  SimOptions o;
  o.n_patients = 4000;
  o.n_times = 25;
  o.seed = 12;
  const auto out = simulate(spec, p, o);
  const auto m = stationary_moments(spec, p);
  for (int j = 0; j < 2; ++j) {
    double s = 0.0, s2 = 0.0;
    long n = 0;
    for (int i = 0; i < o.n_patients; ++i) {
      const double y = out.data.value(i, o.n_times - 1, j);
      s += y;
      s2 += y * y;
      ++n;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    CHECK(std::abs(mean - m.mean[j]) < 4.0 * std::sqrt(m.variance[j] / n));
    CHECK(var == doctest::Approx(m.variance[j]).epsilon(0.08));
  }
}

TEST_CASE("missing mask rate and latent truth layout") {
  const ModelSpec spec = build_dsem(3);
  const ModelParams p = truth_of(spec, R"({"alpha": -0.3, "beta": 0.7, "sigma2_eta": 0.07, "lambda": [0.9, 1.36],
      "nu": [0.05, 0.10], "Sigma_zeta2": [[0.4, 0.1], [0.1, 0.09]], "sigma2_y": [0.28, 0.33, 0.26]})");
  SimOptions o;
  o.n_patients = 100;
  o.n_times = 15;
  o.missing_rate = 0.2;
  const auto out = simulate(spec, p, o);
  const double total = 100.0 * 15 * 3;
  CHECK(std::abs(1.0 - out.data.n_observed() / total - 0.2) < 0.03);
  CHECK(out.eta.size() == 1);
  CHECK(out.eta[0].size() == 100u * 15u);
  CHECK(out.effects[0].size() == 200u);
  CHECK(validate_dataset(out.data).empty());
  const auto again = simulate(spec, p, o);
  CHECK(again.data.values == out.data.values);
  CHECK(again.data.observed == out.data.observed);
}

TEST_CASE("nonstationary person slopes produce a warning") {
  const ModelSpec spec = build_dsem(3);
  const ModelParams p = truth_of(spec, R"({"alpha": 0.0, "beta": 0.95, "sigma2_eta": 0.07, "lambda": [0.9, 1.36],
      "nu": [0.0, 0.0], "Sigma_zeta2": [[0.1, 0.0], [0.0, 0.25]], "sigma2_y": [0.28, 0.33, 0.26]})");
  SimOptions o;
  o.n_patients = 50;
  o.n_times = 5;
  const auto out = simulate(spec, p, o);
  CHECK_FALSE(out.warnings.empty());
}

TEST_CASE("truth sidecar carries parameters and latent truth") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  const ModelParams p = truth_of(spec, R"({"P21": 0.02, "b21": 0.9, "b22": 0.46, "alpha_S1": 0.0,
      "delta_alpha": 1.0, "beta_S1": 0.3, "beta_S2": 0.3, "sigma2_eta": 0.1, "lambda": [0.9, 1.2],
      "nu": [0.0, 0.0], "Sigma_zeta2": [[0.2, 0.0], [0.0, 0.01]], "sigma2_y": [0.1, 0.1, 0.1]})");
  SimOptions o;
  o.n_patients = 3;
  o.n_times = 4;
  const auto out = simulate(spec, p, o);
  const auto j = sim_truth_json(spec, p, out);
  CHECK(j.contains("params"));
  CHECK(j["params"]["alpha_S2"].get<double>() == doctest::Approx(-1.0));
  CHECK(j["latent"].contains("states"));
  const auto back = parse_truth(spec, j["params"]);
  // Precision blocks pass through two matrix inversions.
  const auto a = flatten(compile_index(spec), back.params), b = flatten(compile_index(spec), p);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
}

TEST_CASE("truth missing a block names it") {
  const ModelSpec spec = build_dsem(3);
  try {
    parse_truth(spec, nlohmann::json::parse(R"({"alpha": 0.0})"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.path().rfind("params.", 0) == 0);
  }
}
