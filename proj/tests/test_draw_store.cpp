#include "doctest.h"

#include "dsemkit/diagnostics.hpp"
#include "dsemkit/draw_store.hpp"
#include "dsemkit/errors.hpp"
#include "dsemkit/ladder.hpp"
#include "dsemkit/simulate.hpp"

#include <filesystem>
#include <fstream>

using namespace dsemkit;
namespace fs = std::filesystem;

namespace {

DrawStore small_fit(const ModelSpec& spec, const char* truth_text, std::uint64_t seed = 5) {
  const auto truth = parse_truth(spec, nlohmann::json::parse(truth_text));
  SimOptions o;
  o.n_patients = 6;
  o.n_times = 7;
  o.missing_rate = 0.1;
  const auto sim = simulate(spec, truth.params, o);
  ModelConfig cfg;
  cfg.spec = spec;
  cfg.sampler.chains = 2;
  cfg.sampler.iterations = 40;
  cfg.sampler.burn_in = 10;
  cfg.sampler.thinning = 3;
  cfg.sampler.seed = seed;
  return run_chains(cfg, sim.data);
}

const char* kSuddenGainTruth = R"({"P21": 0.02, "b21": 0.9, "b22": 0.46, "alpha_S1": 0.0,
  "delta_alpha": 1.0, "beta_S1": 0.3, "beta_S2": 0.3, "sigma2_eta": 0.1, "lambda": [0.9, 1.2],
  "nu": [0.0, 0.0], "Sigma_zeta2": [[0.2, 0.0], [0.0, 0.01]], "sigma2_y": [0.1, 0.1, 0.1]})";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsemkit_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("draws round-trip through a directory") {
  const DrawStore store = small_fit(build_dlcsem_sudden_gain(3), kSuddenGainTruth);
  const fs::path dir = fresh_dir("roundtrip");
  const auto files = write_draws(store, dir.string());
  CHECK(files.back() == kManifestFile);
  CHECK(fs::exists(dir / draws_file(0)));
  CHECK(fs::exists(dir / states_file(0)));
  CHECK(fs::exists(dir / transition_file(0)));

  const DrawStore back = read_draws(dir.string());
  CHECK(back.columns == store.columns);
  CHECK(back.n_draws == 10);
  REQUIRE(back.n_chains() == 2);
  for (int c = 0; c < 2; ++c) {
    CHECK(back.chains[c].draws == store.chains[c].draws);
    CHECK(back.chains[c].states == store.chains[c].states);
    CHECK(back.chains[c].seed == store.chains[c].seed);
  }
  CHECK(back.spec_hash == store.spec_hash);
  CHECK(back.data_hash == store.data_hash);
  CHECK(stored_config(back).spec == build_dlcsem_sudden_gain(3));
  CHECK(format_draws_csv(back, 0) == format_draws_csv(store, 0));

  const std::string header = slurp(dir / draws_file(0)).substr(0, 200);
  CHECK(header.find("\"psi_zeta2[1,1]\"") != std::string::npos);
  const auto manifest = nlohmann::json::parse(slurp(dir / kManifestFile));
  CHECK(manifest.at("chains").size() == 2);
  CHECK(manifest.at("chains")[0].at("acceptance").contains("b21"));
}

TEST_CASE("tampered or missing files are integrity errors") {
  const DrawStore store = small_fit(build_dsem(3), R"({"alpha": -0.3, "beta": 0.7, "sigma2_eta": 0.07,
      "lambda": [0.9, 1.36], "nu": [0.05, 0.1], "Sigma_zeta2": [[0.4, 0.1], [0.1, 0.09]], "sigma2_y": [0.28, 0.33, 0.26]})");
  auto expect_integrity = [](const fs::path& dir) {
    try {
      read_draws(dir.string());
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("integrity") != std::string::npos);
    }
  };

  const fs::path a = fresh_dir("tamper_rows");
  write_draws(store, a.string());
  {
    std::ofstream f(a / draws_file(0), std::ios::app);
    f << "0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n";
  }
  expect_integrity(a);

  const fs::path b = fresh_dir("tamper_value");
  write_draws(store, b.string());
  {
    std::string text = slurp(b / draws_file(1));
    const auto pos = text.find('\n') + 1;
    text[pos] = text[pos] == '1' ? '2' : '1';
    std::ofstream(b / draws_file(1), std::ios::binary | std::ios::trunc) << text;
  }
  expect_integrity(b);

  const fs::path c = fresh_dir("missing_chain");
  write_draws(store, c.string());
  fs::remove(c / draws_file(1));
  expect_integrity(c);

  const fs::path d = fresh_dir("no_manifest");
  write_draws(store, d.string());
  fs::remove(d / kManifestFile);
  CHECK_THROWS_AS(read_draws(d.string()), ContractError);
}

TEST_CASE("single-state stores carry no state files") {
  const DrawStore store = small_fit(build_dsem(3), R"({"alpha": -0.3, "beta": 0.7, "sigma2_eta": 0.07,
      "lambda": [0.9, 1.36], "nu": [0.05, 0.1], "Sigma_zeta2": [[0.4, 0.1], [0.1, 0.09]], "sigma2_y": [0.28, 0.33, 0.26]})");
  const fs::path dir = fresh_dir("single");
  write_draws(store, dir.string());
  CHECK_FALSE(fs::exists(dir / states_file(0)));
  CHECK_THROWS_AS(state_report(read_draws(dir.string())), ContractError);
}

TEST_CASE("unwritable output is an I/O error") {
  const DrawStore store = small_fit(build_ar1_observed(), R"({"alpha": 0, "beta": 0.5, "sigma2_y": 1})");
  const fs::path blocker = fresh_dir("blocker");
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(write_draws(store, (blocker / "sub").string()), IoError);
}
