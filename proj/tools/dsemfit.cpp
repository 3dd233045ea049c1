// dsemfit: simulate, fit, summarize and report state trajectories through
// the dsemkit C interface.
#include "dsemkit/dsemkit.h"

#include "CLI11.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

namespace {

// Exit codes: 0 ok, 2 config/contract, 3 I/O, 4 numeric failure.
int exit_code(dsk_status s) {
  switch (s) {
    case DSK_OK: return 0;
    case DSK_ERR_IO: return 3;
    case DSK_ERR_NUMERIC: return 4;
    case DSK_ERR_INTERNAL: return 1;
    default: return 2;
  }
}

struct Failure {
  dsk_status status;
  std::string message;
};

void check(dsk_status s) {
  if (s != DSK_OK) throw Failure{s, dsk_last_error()};
}

struct ConfigDeleter {
  void operator()(dsk_config* p) const { dsk_config_free(p); }
};
struct DatasetDeleter {
  void operator()(dsk_dataset* p) const { dsk_dataset_free(p); }
};
struct DrawsDeleter {
  void operator()(dsk_draws* p) const { dsk_draws_free(p); }
};
using ConfigPtr = std::unique_ptr<dsk_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<dsk_dataset, DatasetDeleter>;
using DrawsPtr = std::unique_ptr<dsk_draws, DrawsDeleter>;

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { dsk_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

dsk_layout layout_of(const std::string& name) { return name == "wide" ? DSK_LAYOUT_WIDE : DSK_LAYOUT_LONG; }

std::string join(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir.back() == '/') return dir + name;
  return dir + "/" + name;
}

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Failure{DSK_ERR_IO, "cannot write '" + path + "'"};
    f << text;
    if (!f) throw Failure{DSK_ERR_IO, "write failed for '" + path + "'"};
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Failure{DSK_ERR_IO, "cannot move '" + tmp + "' to '" + path + "'"};
}

ConfigPtr load_config(const std::string& path) {
  dsk_config* cfg = nullptr;
  check(dsk_config_load(path.c_str(), &cfg));
  return ConfigPtr(cfg);
}

DrawsPtr load_draws(const std::string& dir) {
  dsk_draws* d = nullptr;
  check(dsk_draws_read(dir.c_str(), &d));
  return DrawsPtr(d);
}

struct SimulateArgs {
  std::string config, truth, out, layout = "long";
  int patients = 0, times = 0;
  double missing = -1.0;
  std::optional<std::uint64_t> seed;
};

struct FitArgs {
  std::string config, data, out, layout = "long";
  std::optional<int> chains, thin;
  std::optional<long> iters, burnin;
  std::optional<std::uint64_t> seed;
};

struct DirArgs {
  std::string draws, out;
};

void cmd_simulate(const SimulateArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  check(dsk_simulate_to_dir(cfg.get(), a.truth.c_str(), a.out.c_str(), layout_of(a.layout), a.patients, a.times,
                            a.missing, a.seed ? 1 : 0, a.seed.value_or(0)));
  std::printf("wrote %s, %s, %s\n", join(a.out, "data.csv").c_str(), join(a.out, "truth.json").c_str(),
              join(a.out, "manifest.json").c_str());
}

void cmd_fit(const FitArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  check(dsk_config_set_sampler(cfg.get(), a.chains.value_or(-1), a.iters.value_or(-1), a.burnin.value_or(-1),
                               a.thin.value_or(-1)));
  if (a.seed) check(dsk_config_set_seed(cfg.get(), *a.seed));
  dsk_dataset* raw = nullptr;
  check(dsk_dataset_load(a.data.c_str(), layout_of(a.layout), &raw));
  DatasetPtr data(raw);
  dsk_draws* draws_raw = nullptr;
  check(dsk_fit(cfg.get(), data.get(), &draws_raw));
  DrawsPtr draws(draws_raw);
  check(dsk_draws_write(draws.get(), a.out.c_str()));

  OwnedString flags;
  check(dsk_convergence_flags(draws.get(), 1.1, &flags.p));
  std::string note;
  if (flags.str().empty()) {
    note = "all parameters have R-hat <= 1.1 (or too few draws to compute it)\n";
  } else {
    note = "advisory: R-hat above 1.1 for\n" + flags.str();
  }
  write_text(join(a.out, "convergence.txt"), note);
  int chains = 0, cols = 0;
  long n = 0;
  check(dsk_draws_dims(draws.get(), &chains, &n, &cols));
  std::printf("wrote %d chain(s) x %ld draws x %d parameters to %s\n", chains, n, cols, a.out.c_str());
  if (!flags.str().empty()) std::printf("note: R-hat above 1.1 for some parameters; see convergence.txt\n");
}

void cmd_summarize(const DirArgs& a) {
  DrawsPtr draws = load_draws(a.draws);
  const std::string out = a.out.empty() ? a.draws : a.out;
  OwnedString csv, std_csv, json;
  check(dsk_summary_csv(draws.get(), &csv.p));
  check(dsk_standardized_csv(draws.get(), &std_csv.p));
  check(dsk_summary_json(draws.get(), &json.p));
  write_text(join(out, "summary.csv"), csv.str());
  write_text(join(out, "standardized_loadings.csv"), std_csv.str());
  write_text(join(out, "summary.json"), json.str());
  std::printf("wrote %s, %s, %s\n", join(out, "summary.csv").c_str(),
              join(out, "standardized_loadings.csv").c_str(), join(out, "summary.json").c_str());
  std::printf("standardized loadings: lambda * sd(eta) / sqrt(lambda^2 * var(eta) + sigma2_y), "
              "var(eta) = stationary within variance + person intercept variance\n");
}

void cmd_states(const DirArgs& a) {
  DrawsPtr draws = load_draws(a.draws);
  const std::string out = a.out.empty() ? a.draws : a.out;
  check(dsk_states_write(draws.get(), out.c_str()));
  std::printf("wrote state_probs.csv, switch_times.csv, switch_fraction.csv, transition_probs.csv to %s\n",
              out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian DSEM / DLCSEM estimation"};
  app.set_version_flag("--version", std::string(dsk_version()));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "draw a synthetic panel from true parameters");
  s->add_option("--config", sim.config, "model config (JSON)")->required();
  s->add_option("--truth", sim.truth, "true parameters (JSON)")->required();
  s->add_option("--out", sim.out, "output directory")->required();
  s->add_option("--layout", sim.layout, "data layout")->check(CLI::IsMember({"long", "wide"}));
  s->add_option("--patients", sim.patients, "number of patients")->check(CLI::PositiveNumber);
  s->add_option("--times", sim.times, "number of time points")->check(CLI::PositiveNumber);
  s->add_option("--missing", sim.missing, "MCAR missing rate in [0, 1)");
  s->add_option("--seed", sim.seed, "random seed");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "run the MCMC sampler");
  f->add_option("--config", fit.config, "model config (JSON)")->required();
  f->add_option("--data", fit.data, "data CSV")->required();
  f->add_option("--out", fit.out, "output directory")->required();
  f->add_option("--layout", fit.layout, "data layout")->check(CLI::IsMember({"long", "wide"}));
  f->add_option("--chains", fit.chains, "number of chains");
  f->add_option("--iters", fit.iters, "iterations per chain");
  f->add_option("--burnin", fit.burnin, "burn-in iterations");
  f->add_option("--thin", fit.thin, "thinning interval");
  f->add_option("--seed", fit.seed, "random seed (overrides the config)");

  DirArgs sum;
  auto* u = app.add_subcommand("summarize", "posterior summary of a fit");
  u->add_option("draws", sum.draws, "draws directory written by fit")->required();
  u->add_option("--out", sum.out, "output directory (default: the draws directory)");

  DirArgs st;
  auto* t = app.add_subcommand("states", "state trajectories of a two-state fit");
  t->add_option("draws", st.draws, "draws directory written by fit")->required();
  t->add_option("--out", st.out, "output directory (default: the draws directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[usage]: %s\n", e.what());
    return 2;
  }

  try {
    if (*s) cmd_simulate(sim);
    if (*f) cmd_fit(fit);
    if (*u) cmd_summarize(sum);
    if (*t) cmd_states(st);
  } catch (const Failure& e) {
    std::string msg = e.message;
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::fprintf(stderr, "error[%s]: %s\n", dsk_status_name(e.status), msg.c_str());
    return exit_code(e.status);
  }
  return 0;
}
