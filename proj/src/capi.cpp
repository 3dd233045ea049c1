#include "dsemkit/dsemkit.h"

#include "dsemkit/config.hpp"
#include "dsemkit/dataset.hpp"
#include "dsemkit/diagnostics.hpp"
#include "dsemkit/draw_store.hpp"
#include "dsemkit/errors.hpp"
#include "dsemkit/params.hpp"
#include "dsemkit/sampler.hpp"
#include "dsemkit/simulate.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

struct dsk_config {
  dsemkit::ModelConfig config;
};

struct dsk_dataset {
  dsemkit::Dataset data;
};

struct dsk_draws {
  dsemkit::DrawStore store;
  dsemkit::ModelConfig config;
};

namespace {

thread_local std::string g_last_error;

dsk_status status_of(dsemkit::ErrorKind kind) {
  switch (kind) {
    case dsemkit::ErrorKind::Config: return DSK_ERR_CONFIG;
    case dsemkit::ErrorKind::Contract: return DSK_ERR_CONTRACT;
    case dsemkit::ErrorKind::Io: return DSK_ERR_IO;
    case dsemkit::ErrorKind::Numeric: return DSK_ERR_NUMERIC;
    case dsemkit::ErrorKind::Domain: return DSK_ERR_DOMAIN;
  }
  return DSK_ERR_INTERNAL;
}

template <class F>
dsk_status guard(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const dsemkit::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return DSK_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DSK_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DSK_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DSK_ERR_INTERNAL;
  }
}

dsk_status argument_error(const char* what) {
  g_last_error = what;
  return DSK_ERR_ARGUMENT;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dsemkit::Layout to_layout(dsk_layout l) {
  return l == DSK_LAYOUT_WIDE ? dsemkit::Layout::Wide : dsemkit::Layout::Long;
}

bool valid_layout(dsk_layout l) { return l == DSK_LAYOUT_LONG || l == DSK_LAYOUT_WIDE; }

struct SimRequest {
  int n_patients = 0;
  int n_times = 0;
  double missing_rate = -1.0;
  bool seed_set = false;
  std::uint64_t seed = 0;
};

struct SimResult {
  dsemkit::Dataset data;
  nlohmann::json truth;
  dsemkit::SimOptions opts;
};

SimResult run_simulation(const dsemkit::ModelConfig& cfg, const std::string& truth_text, const SimRequest& req) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(truth_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw dsemkit::ParseError("truth", std::string("not valid JSON (") + e.what() + ")");
  }
  if (!doc.is_object() || !doc.contains("params")) throw dsemkit::ParseError("params", "missing section");
  const auto parsed = dsemkit::parse_truth(cfg.spec, doc.at("params"));
  dsemkit::SimOptions o;
  o.seed = cfg.sampler.seed;
  if (doc.contains("simulation")) {
    const auto& s = doc.at("simulation");
    if (!s.is_object()) throw dsemkit::ParseError("simulation", "expected an object");
    for (const auto& [key, value] : s.items()) {
      const std::string path = "simulation." + key;
      if (key == "n_patients" || key == "n_times") {
        if (!value.is_number_integer() || value.get<long>() < 1) throw dsemkit::ParseError(path, "expected a positive integer");
        (key == "n_patients" ? o.n_patients : o.n_times) = value.get<int>();
      } else if (key == "missing_rate") {
        if (!value.is_number()) throw dsemkit::ParseError(path, "expected a number");
        o.missing_rate = value.get<double>();
      } else if (key == "seed") {
        if (!value.is_number_unsigned()) throw dsemkit::ParseError(path, "expected a non-negative integer");
        o.seed = value.get<std::uint64_t>();
      } else {
        throw dsemkit::ParseError(path, "unknown key");
      }
    }
  }
  if (req.n_patients > 0) o.n_patients = req.n_patients;
  if (req.n_times > 0) o.n_times = req.n_times;
  if (req.missing_rate >= 0.0) o.missing_rate = req.missing_rate;
  if (req.seed_set) o.seed = req.seed;
  if (!(o.missing_rate >= 0.0 && o.missing_rate < 1.0))
    throw dsemkit::ParseError("simulation.missing_rate", "must lie in [0, 1)");

  const auto out = dsemkit::simulate(cfg.spec, parsed.params, o);
  SimResult r;
  r.truth = dsemkit::sim_truth_json(cfg.spec, parsed.params, out);
  for (const auto& w : parsed.warnings) r.truth["warnings"].push_back(w);
  r.truth["simulation"] = {{"n_patients", o.n_patients},
                           {"n_times", o.n_times},
                           {"missing_rate", o.missing_rate},
                           {"seed", o.seed}};
  r.data = out.data;
  r.opts = o;
  return r;
}

}  // namespace

extern "C" {

const char* dsk_version(void) { return DSEMKIT_VERSION; }

const char* dsk_last_error(void) { return g_last_error.c_str(); }

const char* dsk_status_name(dsk_status status) {
  switch (status) {
    case DSK_OK: return "ok";
    case DSK_ERR_ARGUMENT: return "argument";
    case DSK_ERR_CONFIG: return "config";
    case DSK_ERR_IO: return "io";
    case DSK_ERR_NUMERIC: return "numeric";
    case DSK_ERR_CONTRACT: return "contract";
    case DSK_ERR_DOMAIN: return "domain";
    case DSK_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void dsk_string_free(char* s) { std::free(s); }

dsk_status dsk_config_load(const char* path, dsk_config** out) {
  if (!path || !out) return argument_error("dsk_config_load: null argument");
  return guard([&] {
    *out = new dsk_config{dsemkit::load_model_config(path)};
    return DSK_OK;
  });
}

dsk_status dsk_config_parse(const char* text, dsk_config** out) {
  if (!text || !out) return argument_error("dsk_config_parse: null argument");
  return guard([&] {
    *out = new dsk_config{dsemkit::parse_model_config(text)};
    return DSK_OK;
  });
}

void dsk_config_free(dsk_config* cfg) { delete cfg; }

dsk_status dsk_config_set_sampler(dsk_config* cfg, int chains, long iterations, long burn_in, int thinning) {
  if (!cfg) return argument_error("dsk_config_set_sampler: null config");
  return guard([&] {
    dsemkit::SamplerSettings s = cfg->config.sampler;
    if (chains >= 0) s.chains = chains;
    if (iterations >= 0) s.iterations = iterations;
    if (burn_in >= 0) s.burn_in = burn_in;
    if (thinning >= 0) s.thinning = thinning;
    dsemkit::check_settings(s);
    cfg->config.sampler = s;
    return DSK_OK;
  });
}

dsk_status dsk_config_set_seed(dsk_config* cfg, uint64_t seed) {
  if (!cfg) return argument_error("dsk_config_set_seed: null config");
  cfg->config.sampler.seed = seed;
  return DSK_OK;
}

dsk_status dsk_config_serialize(const dsk_config* cfg, char** out) {
  if (!cfg || !out) return argument_error("dsk_config_serialize: null argument");
  return guard([&] {
    *out = copy_string(dsemkit::serialize_config(cfg->config));
    return DSK_OK;
  });
}

dsk_status dsk_config_n_parameters(const dsk_config* cfg, size_t* out) {
  if (!cfg || !out) return argument_error("dsk_config_n_parameters: null argument");
  return guard([&] {
    *out = static_cast<size_t>(dsemkit::compile_index(cfg->config.spec).n_columns);
    return DSK_OK;
  });
}

dsk_status dsk_dataset_load(const char* path, dsk_layout layout, dsk_dataset** out) {
  if (!path || !out) return argument_error("dsk_dataset_load: null argument");
  if (!valid_layout(layout)) return argument_error("dsk_dataset_load: unknown layout");
  return guard([&] {
    *out = new dsk_dataset{dsemkit::load_dataset(path, to_layout(layout))};
    return DSK_OK;
  });
}

void dsk_dataset_free(dsk_dataset* data) { delete data; }

dsk_status dsk_dataset_dims(const dsk_dataset* data, int* n_patients, int* n_times, int* n_indicators) {
  if (!data) return argument_error("dsk_dataset_dims: null dataset");
  if (n_patients) *n_patients = data->data.n_patients;
  if (n_times) *n_times = data->data.n_times;
  if (n_indicators) *n_indicators = data->data.n_indicators;
  return DSK_OK;
}

dsk_status dsk_dataset_write(const dsk_dataset* data, const char* path, dsk_layout layout) {
  if (!data || !path) return argument_error("dsk_dataset_write: null argument");
  if (!valid_layout(layout)) return argument_error("dsk_dataset_write: unknown layout");
  return guard([&] {
    dsemkit::write_dataset(data->data, path, to_layout(layout));
    return DSK_OK;
  });
}

dsk_status dsk_dataset_value(const dsk_dataset* data, int patient, int time, int indicator, double* value,
                             int* observed) {
  if (!data) return argument_error("dsk_dataset_value: null dataset");
  const auto& d = data->data;
  if (patient < 1 || patient > d.n_patients || time < 1 || time > d.n_times || indicator < 1 ||
      indicator > d.n_indicators)
    return argument_error("dsk_dataset_value: index out of range");
  if (value) *value = d.value(patient - 1, time - 1, indicator - 1);
  if (observed) *observed = d.is_observed(patient - 1, time - 1, indicator - 1) ? 1 : 0;
  return DSK_OK;
}

dsk_status dsk_simulate(const dsk_config* cfg, const char* truth_json, int n_patients, int n_times,
                        double missing_rate, int seed_set, uint64_t seed, dsk_dataset** out_data,
                        char** out_truth) {
  if (!cfg || !truth_json || !out_data) return argument_error("dsk_simulate: null argument");
  return guard([&] {
    SimRequest req{n_patients, n_times, missing_rate, seed_set != 0, seed};
    SimResult r = run_simulation(cfg->config, truth_json, req);
    if (out_truth) *out_truth = copy_string(r.truth.dump(2) + "\n");
    *out_data = new dsk_dataset{std::move(r.data)};
    return DSK_OK;
  });
}

dsk_status dsk_simulate_to_dir(const dsk_config* cfg, const char* truth_path, const char* out_dir,
                               dsk_layout layout, int n_patients, int n_times, double missing_rate,
                               int seed_set, uint64_t seed) {
  if (!cfg || !truth_path || !out_dir) return argument_error("dsk_simulate_to_dir: null argument");
  if (!valid_layout(layout)) return argument_error("dsk_simulate_to_dir: unknown layout");
  return guard([&] {
    const std::string text = dsemkit::read_file(truth_path);
    SimRequest req{n_patients, n_times, missing_rate, seed_set != 0, seed};
    SimResult r = run_simulation(cfg->config, text, req);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw dsemkit::IoError(std::string("cannot create directory '") + out_dir + "'");
    const std::string data_text = dsemkit::format_dataset(r.data, to_layout(layout));
    const std::string truth_text = r.truth.dump(2) + "\n";
    dsemkit::write_file_atomic((fs::path(out_dir) / "data.csv").string(), data_text);
    dsemkit::write_file_atomic((fs::path(out_dir) / "truth.json").string(), truth_text);
    nlohmann::json m;
    m["version"] = DSEMKIT_VERSION;
    m["seed"] = r.opts.seed;
    m["config_hash"] = dsemkit::hex64(dsemkit::fnv1a(dsemkit::serialize_config(cfg->config)));
    m["data_hash"] = dsemkit::hex64(dsemkit::fnv1a(dsemkit::format_dataset(r.data, dsemkit::Layout::Long)));
    m["layout"] = dsemkit::layout_name(to_layout(layout));
    m["n_patients"] = r.opts.n_patients;
    m["n_times"] = r.opts.n_times;
    m["n_indicators"] = r.data.n_indicators;
    m["missing_rate"] = r.opts.missing_rate;
    m["files"] = {{"data.csv", dsemkit::hex64(dsemkit::fnv1a(data_text))},
                  {"truth.json", dsemkit::hex64(dsemkit::fnv1a(truth_text))}};
    dsemkit::write_file_atomic((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
    return DSK_OK;
  });
}

dsk_status dsk_fit(const dsk_config* cfg, const dsk_dataset* data, dsk_draws** out) {
  if (!cfg || !data || !out) return argument_error("dsk_fit: null argument");
  return guard([&] {
    auto* d = new dsk_draws{dsemkit::run_chains(cfg->config, data->data), cfg->config};
    *out = d;
    return DSK_OK;
  });
}

dsk_status dsk_draws_write(const dsk_draws* draws, const char* dir) {
  if (!draws || !dir) return argument_error("dsk_draws_write: null argument");
  return guard([&] {
    dsemkit::write_draws(draws->store, dir);
    return DSK_OK;
  });
}

dsk_status dsk_draws_read(const char* dir, dsk_draws** out) {
  if (!dir || !out) return argument_error("dsk_draws_read: null argument");
  return guard([&] {
    dsemkit::DrawStore store = dsemkit::read_draws(dir);
    dsemkit::ModelConfig cfg = dsemkit::stored_config(store);
    if (dsemkit::compile_index(cfg.spec).columns() != store.columns)
      throw dsemkit::ContractError("integrity: draw columns do not match the stored model");
    *out = new dsk_draws{std::move(store), std::move(cfg)};
    return DSK_OK;
  });
}

void dsk_draws_free(dsk_draws* draws) { delete draws; }

dsk_status dsk_draws_dims(const dsk_draws* draws, int* n_chains, long* n_draws, int* n_columns) {
  if (!draws) return argument_error("dsk_draws_dims: null draws");
  if (n_chains) *n_chains = draws->store.n_chains();
  if (n_draws) *n_draws = draws->store.n_draws;
  if (n_columns) *n_columns = static_cast<int>(draws->store.columns.size());
  return DSK_OK;
}

dsk_status dsk_draws_n_states(const dsk_draws* draws, int* n_states) {
  if (!draws || !n_states) return argument_error("dsk_draws_n_states: null argument");
  *n_states = draws->store.n_states;
  return DSK_OK;
}

const char* dsk_draws_column_name(const dsk_draws* draws, int column) {
  if (!draws || column < 0 || column >= static_cast<int>(draws->store.columns.size())) return nullptr;
  return draws->store.columns[static_cast<std::size_t>(column)].c_str();
}

dsk_status dsk_draws_copy_column(const dsk_draws* draws, int chain, int column, double* buffer, size_t length) {
  if (!draws || !buffer) return argument_error("dsk_draws_copy_column: null argument");
  const auto& s = draws->store;
  if (chain < 0 || chain >= s.n_chains() || column < 0 || column >= static_cast<int>(s.columns.size()))
    return argument_error("dsk_draws_copy_column: index out of range");
  if (length < static_cast<size_t>(s.n_draws)) return argument_error("dsk_draws_copy_column: buffer too small");
  for (long d = 0; d < s.n_draws; ++d) buffer[d] = s.at(chain, d, column);
  return DSK_OK;
}

dsk_status dsk_draws_manifest(const dsk_draws* draws, char** out) {
  if (!draws || !out) return argument_error("dsk_draws_manifest: null argument");
  return guard([&] {
    *out = copy_string(dsemkit::manifest_json(draws->store, {}).dump(2) + "\n");
    return DSK_OK;
  });
}

dsk_status dsk_summary_csv(const dsk_draws* draws, char** out) {
  if (!draws || !out) return argument_error("dsk_summary_csv: null argument");
  return guard([&] {
    *out = copy_string(dsemkit::summary_csv(dsemkit::summarize(draws->store, draws->config.spec)));
    return DSK_OK;
  });
}

dsk_status dsk_standardized_csv(const dsk_draws* draws, char** out) {
  if (!draws || !out) return argument_error("dsk_standardized_csv: null argument");
  return guard([&] {
    *out = copy_string(dsemkit::summary_csv(dsemkit::standardize_loadings(draws->store, draws->config.spec)));
    return DSK_OK;
  });
}

dsk_status dsk_summary_json(const dsk_draws* draws, char** out) {
  if (!draws || !out) return argument_error("dsk_summary_json: null argument");
  return guard([&] {
    nlohmann::json j;
    j["parameters"] = dsemkit::summary_json(dsemkit::summarize(draws->store, draws->config.spec));
    j["standardized_loadings"] =
        dsemkit::summary_json(dsemkit::standardize_loadings(draws->store, draws->config.spec));
    *out = copy_string(j.dump(2) + "\n");
    return DSK_OK;
  });
}

dsk_status dsk_convergence_flags(const dsk_draws* draws, double threshold, char** out) {
  if (!draws || !out) return argument_error("dsk_convergence_flags: null argument");
  return guard([&] {
    std::string text;
    for (const auto& name :
         dsemkit::convergence_flags(dsemkit::summarize(draws->store, draws->config.spec), threshold))
      text += name + "\n";
    *out = copy_string(text);
    return DSK_OK;
  });
}

dsk_status dsk_states_write(const dsk_draws* draws, const char* dir) {
  if (!draws || !dir) return argument_error("dsk_states_write: null argument");
  return guard([&] {
    const auto& s = draws->store;
    const auto r = dsemkit::state_report(s);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw dsemkit::IoError(std::string("cannot create directory '") + dir + "'");
    dsemkit::write_file_atomic((fs::path(dir) / "state_probs.csv").string(), dsemkit::state_probs_csv(r, s));
    dsemkit::write_file_atomic((fs::path(dir) / "switch_times.csv").string(), dsemkit::switch_times_csv(r, s));
    dsemkit::write_file_atomic((fs::path(dir) / "switch_fraction.csv").string(), dsemkit::switch_fraction_csv(r, s));
    dsemkit::write_file_atomic((fs::path(dir) / "transition_probs.csv").string(),
                               dsemkit::transition_probs_csv(r, s));
    return DSK_OK;
  });
}

namespace {

std::vector<std::vector<double>> split_chains(const double* draws, int n_chains, long n) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n_chains));
  for (int c = 0; c < n_chains; ++c) out[c].assign(draws + static_cast<std::size_t>(c) * n, draws + static_cast<std::size_t>(c + 1) * n);
  return out;
}

}  // namespace

dsk_status dsk_rhat(const double* draws, int n_chains, long n_per_chain, double* out, int* degenerate) {
  if (!draws || !out || n_chains < 1 || n_per_chain < 1) return argument_error("dsk_rhat: bad argument");
  return guard([&] {
    const auto r = dsemkit::compute_rhat(split_chains(draws, n_chains, n_per_chain));
    *out = r.value;
    if (degenerate) *degenerate = r.degenerate ? 1 : 0;
    return DSK_OK;
  });
}

dsk_status dsk_ess(const double* draws, int n_chains, long n_per_chain, double* out, int* degenerate) {
  if (!draws || !out || n_chains < 1 || n_per_chain < 1) return argument_error("dsk_ess: bad argument");
  return guard([&] {
    const auto r = dsemkit::compute_ess(split_chains(draws, n_chains, n_per_chain));
    *out = r.value;
    if (degenerate) *degenerate = r.degenerate ? 1 : 0;
    return DSK_OK;
  });
}

}  // extern "C"
