#include "dsemkit/draw_store.hpp"

#include "dsemkit/errors.hpp"

#include <charconv>
#include <filesystem>

namespace dsemkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "dsemkit-draws/1";

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(line);
    pos = end + 1;
  }
  return out;
}

std::vector<std::string> split_quoted(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        out.back() += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t end = line.find(',', pos);
    out.push_back(line.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

double parse_number(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ContractError("integrity: non-numeric value in " + where);
  return v;
}

std::string read_chain_file(const std::string& dir, const std::string& name, const json& files) {
  const std::string path = join_path(dir, name);
  if (!fs::exists(path)) throw ContractError("integrity: missing file " + name);
  std::string text = read_file(path);
  if (files.contains(name) && files.at(name).get<std::string>() != hex64(fnv1a(text)))
    throw ContractError("integrity: fingerprint mismatch for " + name);
  return text;
}

template <class T>
T field(const json& m, const char* key) {
  if (!m.contains(key)) throw ContractError(std::string("manifest: missing field '") + key + "'");
  try {
    return m.at(key).get<T>();
  } catch (const json::exception&) {
    throw ContractError(std::string("manifest: malformed field '") + key + "'");
  }
}

}  // namespace

std::string draws_file(int chain) { return "draws_chain" + std::to_string(chain + 1) + ".csv"; }
std::string states_file(int chain) { return "states_chain" + std::to_string(chain + 1) + ".csv"; }
std::string transition_file(int chain) { return "transition_chain" + std::to_string(chain + 1) + ".csv"; }

std::string format_draws_csv(const DrawStore& store, int chain) {
  std::string out;
  for (std::size_t c = 0; c < store.columns.size(); ++c) {
    if (c) out += ',';
    out += csv_field(store.columns[c]);
  }
  out += '\n';
  const int cols = static_cast<int>(store.columns.size());
  for (long d = 0; d < store.n_draws; ++d) {
    for (int c = 0; c < cols; ++c) {
      if (c) out += ',';
      out += format_double(store.at(chain, d, c));
    }
    out += '\n';
  }
  return out;
}

// One row per draw; the trajectory is written as a string of 1-based state
// digits in (patient, time) order.
std::string format_states_csv(const DrawStore& store, int chain) {
  const std::size_t NT = static_cast<std::size_t>(store.n_patients) * store.n_times;
  std::string out = "draw,states\n";
  const auto& s = store.chains[chain].states;
  for (long d = 0; d < store.n_draws; ++d) {
    out += std::to_string(d + 1);
    out += ',';
    for (std::size_t c = 0; c < NT; ++c) out += static_cast<char>('0' + s[static_cast<std::size_t>(d) * NT + c]);
    out += '\n';
  }
  return out;
}

std::string format_transition_csv(const DrawStore& store, int chain) {
  std::string out = "patient,time,transition_sum\n";
  const auto& ts = store.chains[chain].transition_sum;
  for (int i = 0; i < store.n_patients; ++i)
    for (int t = 0; t < store.n_times; ++t) {
      out += std::to_string(i + 1) + ',' + std::to_string(t + 1) + ',';
      out += format_double(ts[static_cast<std::size_t>(i) * store.n_times + t]);
      out += '\n';
    }
  return out;
}

json manifest_json(const DrawStore& store, const std::vector<std::pair<std::string, std::string>>& files) {
  json m;
  m["format"] = kFormat;
  m["version"] = store.version;
  m["seed"] = store.seed;
  m["spec_hash"] = store.spec_hash;
  m["data_hash"] = store.data_hash;
  m["iterations"] = store.iterations;
  m["burn_in"] = store.burn_in;
  m["thinning"] = store.thinning;
  m["n_chains"] = store.n_chains();
  m["n_draws"] = store.n_draws;
  m["n_patients"] = store.n_patients;
  m["n_times"] = store.n_times;
  m["n_indicators"] = store.n_indicators;
  m["n_states"] = store.n_states;
  m["columns"] = store.columns;
  m["patient_ids"] = store.patient_ids;
  m["time_ids"] = store.time_ids;
  m["config"] = json::parse(store.config);
  json chains = json::array();
  double total = 0.0;
  for (int c = 0; c < store.n_chains(); ++c) {
    const auto& ch = store.chains[c];
    total += ch.seconds;
    chains.push_back({{"chain", c + 1}, {"seed", ch.seed}, {"seconds", ch.seconds}, {"acceptance", ch.acceptance}});
  }
  m["chains"] = chains;
  m["seconds"] = total;
  json inv = json::object();
  for (const auto& [name, hash] : files) inv[name] = hash;
  m["files"] = inv;
  return m;
}

std::vector<std::string> write_draws(const DrawStore& store, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir + "'");
  std::vector<std::pair<std::string, std::string>> files;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(join_path(dir, name), text);
    files.emplace_back(name, hex64(fnv1a(text)));
  };
  for (int c = 0; c < store.n_chains(); ++c) {
    emit(draws_file(c), format_draws_csv(store, c));
    if (store.n_states == 2) {
      emit(states_file(c), format_states_csv(store, c));
      emit(transition_file(c), format_transition_csv(store, c));
    }
  }
  write_file_atomic(join_path(dir, kManifestFile), manifest_json(store, files).dump(2) + "\n");
  std::vector<std::string> names;
  for (const auto& f : files) names.push_back(f.first);
  names.push_back(kManifestFile);
  return names;
}

DrawStore read_draws(const std::string& dir) {
  const std::string mpath = join_path(dir, kManifestFile);
  if (!fs::exists(mpath)) throw ContractError("manifest: no " + std::string(kManifestFile) + " in '" + dir + "'");
  json m;
  try {
    m = json::parse(read_file(mpath));
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("manifest: not valid JSON (") + e.what() + ")");
  }
  if (!m.is_object() || !m.contains("format") || m.at("format") != kFormat)
    throw ContractError("manifest: unrecognized format");

  DrawStore store;
  store.version = field<std::string>(m, "version");
  store.seed = field<std::uint64_t>(m, "seed");
  store.spec_hash = field<std::string>(m, "spec_hash");
  store.data_hash = field<std::string>(m, "data_hash");
  store.iterations = field<long>(m, "iterations");
  store.burn_in = field<long>(m, "burn_in");
  store.thinning = field<int>(m, "thinning");
  store.n_draws = field<long>(m, "n_draws");
  store.n_patients = field<int>(m, "n_patients");
  store.n_times = field<int>(m, "n_times");
  store.n_indicators = field<int>(m, "n_indicators");
  store.n_states = field<int>(m, "n_states");
  store.columns = field<std::vector<std::string>>(m, "columns");
  store.patient_ids = field<std::vector<std::string>>(m, "patient_ids");
  store.time_ids = field<std::vector<std::string>>(m, "time_ids");
  if (!m.contains("config")) throw ContractError("manifest: missing field 'config'");
  store.config = m.at("config").dump();
  const int n_chains = field<int>(m, "n_chains");
  const json files = m.contains("files") ? m.at("files") : json::object();
  const json chains = m.contains("chains") ? m.at("chains") : json::array();
  if (n_chains < 1 || static_cast<int>(chains.size()) != n_chains)
    throw ContractError("manifest: chain count does not match chain records");
  if (store.n_draws < 0 || store.n_draws != (store.iterations - store.burn_in) / std::max(store.thinning, 1))
    throw ContractError("integrity: draw count does not match iterations, burn-in and thinning");

  const std::size_t cols = store.columns.size();
  const std::size_t NT = static_cast<std::size_t>(store.n_patients) * store.n_times;
  store.chains.resize(static_cast<std::size_t>(n_chains));
  for (int c = 0; c < n_chains; ++c) {
    ChainDraws& ch = store.chains[c];
    const json& rec = chains.at(c);
    ch.seed = field<std::uint64_t>(rec, "seed");
    ch.seconds = field<double>(rec, "seconds");
    ch.acceptance = field<std::map<std::string, double>>(rec, "acceptance");

    const std::string name = draws_file(c);
    const std::string text = read_chain_file(dir, name, files);
    const auto lines = split_lines(text);
    if (lines.empty()) throw ContractError("integrity: " + name + " has no header");
    const auto header = split_quoted(lines[0]);
    if (header.size() != cols) throw ContractError("integrity: " + name + " column count differs from manifest");
    for (std::size_t k = 0; k < cols; ++k)
      if (header[k] != store.columns[k]) throw ContractError("integrity: " + name + " header differs from manifest");
    if (static_cast<long>(lines.size()) - 1 != store.n_draws)
      throw ContractError("integrity: " + name + " has " + std::to_string(lines.size() - 1) +
                          " draw rows, manifest records " + std::to_string(store.n_draws));
    ch.draws.reserve(static_cast<std::size_t>(store.n_draws) * cols);
    for (std::size_t r = 1; r < lines.size(); ++r) {
      const auto f = split_fields(lines[r]);
      if (f.size() != cols) throw ContractError("integrity: ragged row " + std::to_string(r + 1) + " in " + name);
      for (auto v : f) ch.draws.push_back(parse_number(v, name));
    }

    if (store.n_states != 2) continue;
    const std::string sname = states_file(c);
    const std::string stext = read_chain_file(dir, sname, files);
    const auto slines = split_lines(stext);
    if (static_cast<long>(slines.size()) - 1 != store.n_draws)
      throw ContractError("integrity: " + sname + " row count differs from manifest");
    ch.states.reserve(static_cast<std::size_t>(store.n_draws) * NT);
    for (std::size_t r = 1; r < slines.size(); ++r) {
      const auto f = split_fields(slines[r]);
      if (f.size() != 2 || f[1].size() != NT) throw ContractError("integrity: malformed row in " + sname);
      for (char ch_state : f[1]) {
        if (ch_state != '1' && ch_state != '2') throw ContractError("integrity: bad state label in " + sname);
        ch.states.push_back(static_cast<std::uint8_t>(ch_state - '0'));
      }
    }
    const std::string tname = transition_file(c);
    const std::string ttext = read_chain_file(dir, tname, files);
    const auto tlines = split_lines(ttext);
    if (tlines.size() != NT + 1) throw ContractError("integrity: " + tname + " row count differs from panel size");
    ch.transition_sum.reserve(NT);
    for (std::size_t r = 1; r < tlines.size(); ++r) {
      const auto f = split_fields(tlines[r]);
      if (f.size() != 3) throw ContractError("integrity: malformed row in " + tname);
      ch.transition_sum.push_back(parse_number(f[2], tname));
    }
  }
  return store;
}

ModelConfig stored_config(const DrawStore& store) {
  try {
    return parse_model_config(store.config);
  } catch (const ParseError& e) {
    throw ContractError(std::string("manifest: stored config does not parse (") + e.what() + ")");
  }
}

}  // namespace dsemkit
