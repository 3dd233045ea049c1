#include "doctest.h"

#include "dsemkit/errors.hpp"
#include "dsemkit/ladder.hpp"

#include <string>
#include <vector>

using namespace dsemkit;

namespace {

std::vector<std::string> block_names(const ModelSpec& spec) {
  std::vector<std::string> out;
  for (const auto& b : compile_index(spec).blocks) out.push_back(b.name);
  return out;
}

int free_loadings(const MeasurementPattern& m) {
  int n = 0;
  for (const auto& row : m.loadings)
    for (const auto& e : row) n += e.free;
  return n;
}

int anchors(const MeasurementPattern& m) {
  int n = 0;
  for (const auto& row : m.loadings)
    for (const auto& e : row) n += !e.free && e.value == 1.0;
  return n;
}

}  // namespace

TEST_CASE("cfa with four factors of three indicators") {
  const ModelSpec spec = build_cfa(4, 3);
  const auto index = compile_index(spec);
  CHECK(index.find("lambda")->size() == 8);
  CHECK(index.find("nu")->size() == 8);
  CHECK(index.find("psi_y")->dim == 12);
  CHECK(index.find("mu_eta")->dim == 4);
  CHECK(index.find("psi_eta")->shape == Shape::SymMatrix);
  CHECK(index.find("psi_eta")->dim == 4);
  CHECK(spec.ar_order == 0);
}

TEST_CASE("single-factor cfa and under-identified cfa") {
  CHECK(free_loadings(build_cfa(1, 3).measurement[0]) == 2);
  CHECK_THROWS_AS(build_cfa(1, 1), ContractError);
  CHECK_THROWS_AS(build_cfa(0, 3), ContractError);
}

TEST_CASE("observed AR(1) has three scalar blocks") {
  const auto index = compile_index(build_ar1_observed());
  REQUIRE(index.blocks.size() == 3);
  for (const auto& b : index.blocks) CHECK(b.shape == Shape::Scalar);
  CHECK(index.n_columns == 3);
}

TEST_CASE("latent AR(1) blocks") {
  const ModelSpec spec = build_ar1_latent(3);
  CHECK(block_names(spec) == std::vector<std::string>{"alpha", "beta", "psi_eta", "lambda", "nu", "psi_y"});
  const auto index = compile_index(spec);
  CHECK(index.find("lambda")->size() == 2);
  CHECK(index.find("nu")->size() == 2);
  CHECK(index.find("psi_y")->size() == 3);
  CHECK(index.n_columns == 10);
  CHECK(free_loadings(build_ar1_latent(2).measurement[0]) == 1);
}

TEST_CASE("two-level models") {
  const ModelSpec obs = build_two_level(1, true);
  CHECK(obs.observed);
  const auto index = compile_index(obs);
  CHECK(index.blocks.size() == 4);
  const BlockInfo* re = index.find("psi_eps2");
  REQUIRE(re != nullptr);
  CHECK(re->shape == Shape::SymMatrix);
  CHECK(re->dim == 2);

  const auto ri = compile_index(build_two_level(1, false));
  REQUIRE(ri.find("psi_eps2") != nullptr);
  CHECK(ri.find("psi_eps2")->shape == Shape::Scalar);

  const ModelSpec latent = build_two_level(3, true);
  CHECK_FALSE(latent.observed);
  CHECK(compile_index(latent).find("psi_zeta2")->dim == 2);
}

TEST_CASE("cross-classified models add a time-slope precision") {
  const ModelSpec obs = build_cross_classified(1);
  const auto index = compile_index(obs);
  REQUIRE(index.find("psi_eps3") != nullptr);
  CHECK(obs.priors.at("psi_eps3") == DistributionParams{Gamma{1.0, 1.0}});
  CHECK(compile_index(build_cross_classified(3)).find("psi_zeta3") != nullptr);
  CHECK(build_cross_classified(3).has_time_slope());
}

TEST_CASE("dsem rows mirror the two-level posterior table") {
  // alpha, beta, sigma2_eta, lambda 1-2, nu 1-2, Sigma_zeta2 (3 cells),
  // sigma2_y 1-3; the time-slope row is the cross-classified extra.
  const auto dsem = compile_index(build_dsem(3));
  CHECK(dsem.n_columns == 13);
  CHECK(compile_index(build_cross_classified(3)).n_columns == 14);
  CHECK(free_loadings(build_dsem(2).measurement[0]) == 1);
  CHECK(validate_spec(build_dsem(2)).empty());
}

TEST_CASE("sudden-gain blocks follow the state-switching table") {
  const ModelSpec spec = build_dlcsem_sudden_gain(3);
  CHECK(block_names(spec) == std::vector<std::string>{"P21", "b21", "b22", "alpha_S1", "alpha_S2",
                                                      "delta_alpha", "beta_S1", "beta_S2", "psi_zeta2",
                                                      "psi_eta", "lambda", "nu", "psi_y"});
  const auto index = compile_index(spec);
  CHECK(index.find("alpha_S2")->derived);
  CHECK(spec.states.delta_constraint);
  CHECK(spec.transition_slopes() == 1);
}

TEST_CASE("one-state sudden gain reproduces the dsem spec") {
  StateOptions one;
  one.n_states = 1;
  const ModelSpec a = build_dlcsem_sudden_gain(3, one);
  const ModelSpec b = build_dsem(3);
  CHECK(a == b);
  CHECK(compile_index(a) == compile_index(b));
}

TEST_CASE("fusion model structure") {
  const ModelSpec spec = build_dlcsem_fusion(false);
  REQUIRE(spec.n_states() == 2);
  const auto& m1 = spec.measurement[spec.processes[0].measurement_set];
  const auto& m2 = spec.measurement[spec.processes[1].measurement_set];
  CHECK(m1.loadings.size() == 9);
  CHECK(m1.n_factors() == 3);
  CHECK(anchors(m1) == 3);
  CHECK(m2.n_factors() == 1);
  CHECK(anchors(m2) == 1);
  CHECK(spec.processes[0].n_factors == 3);
  CHECK(spec.transition_slopes() == 3);
  const auto index = compile_index(spec);
  const BlockInfo* psi_eta_s1 = index.find("psi_eta_S1");
  const BlockInfo* zeta_s1 = index.find("psi_zeta2_S1");
  REQUIRE(psi_eta_s1 != nullptr);
  REQUIRE(zeta_s1 != nullptr);
  CHECK(psi_eta_s1->dim == 3);
  CHECK(zeta_s1->dim == 3);

  const ModelSpec swapped = build_dlcsem_fusion(true);
  CHECK(swapped.processes[0].n_factors == 1);
  CHECK(swapped.processes[1].n_factors == 3);
  CHECK(swapped.transition_slopes() == 1);
}

TEST_CASE("every builder output validates") {
  std::vector<ModelSpec> specs = {build_cfa(4, 3), build_cfa(1, 2), build_ar1_observed(), build_ar1_latent(3),
                                  build_two_level(1, true), build_two_level(3, false), build_cross_classified(1),
                                  build_cross_classified(3), build_dsem(3), build_dlcsem_sudden_gain(3),
                                  build_dlcsem_fusion(false), build_dlcsem_fusion(true)};
  for (const auto& s : specs) {
    CAPTURE(s.builder.name);
    CHECK(validate_spec(s).empty());
  }
}
