#include "dsemkit/config.hpp"

#include "dsemkit/dataset.hpp"
#include "dsemkit/errors.hpp"
#include "dsemkit/ladder.hpp"

#include <cstdio>
#include <limits>
#include <set>

namespace dsemkit {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr const char* kHierarchicalMean = "sqrt_sigma2_eta";

long line_of(std::string_view text, std::size_t byte) {
  long line = 1;
  for (std::size_t k = 0; k < byte && k < text.size(); ++k)
    if (text[k] == '\n') ++line;
  return line;
}

void only_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ParseError(path.empty() ? "document" : path, "expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, unused] : obj.items())
    if (!allowed.count(k))
      throw ParseError(path.empty() ? k : path + "." + k, "unknown key");
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

double get_number(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) throw ParseError(join(path, key), "missing required key");
  const json& v = obj.at(key);
  if (!v.is_number()) throw ParseError(join(path, key), "expected a number");
  return v.get<double>();
}

long get_int(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) throw ParseError(join(path, key), "missing required key");
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ParseError(join(path, key), "expected an integer");
  return v.get<long>();
}

long get_int_or(const json& obj, const std::string& path, const char* key, long dflt) {
  return obj.contains(key) ? get_int(obj, path, key) : dflt;
}

bool get_bool_or(const json& obj, const std::string& path, const char* key, bool dflt) {
  if (!obj.contains(key)) return dflt;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ParseError(join(path, key), "expected true or false");
  return v.get<bool>();
}

double bound(const json& obj, const std::string& path, const char* key, double dflt) {
  if (!obj.contains(key)) return dflt;
  const json& v = obj.at(key);
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
  }
  if (v.is_null()) return dflt;
  if (!v.is_number()) throw ParseError(join(path, key), "expected a number or \"inf\"");
  return v.get<double>();
}

json bound_json(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  return v;
}

BuilderCall parse_builder(const json& m) {
  if (!m.is_object()) throw ParseError("model", "expected an object");
  if (!m.contains("builder")) throw ParseError("model.builder", "missing required key");
  if (!m.at("builder").is_string()) throw ParseError("model.builder", "expected a string");
  BuilderCall c;
  c.name = m.at("builder").get<std::string>();
  const std::string p = "model";
  if (c.name == "cfa") {
    only_keys(m, p, {"builder", "centering", "n_factors", "indicators_per_factor"});
    c.n_factors = static_cast<int>(get_int(m, p, "n_factors"));
    c.indicators_per_factor = static_cast<int>(get_int_or(m, p, "indicators_per_factor", 3));
  } else if (c.name == "ar1_observed") {
    only_keys(m, p, {"builder", "centering"});
    c.n_indicators = 1;
  } else if (c.name == "two_level") {
    only_keys(m, p, {"builder", "centering", "n_indicators", "random_slope"});
    c.n_indicators = static_cast<int>(get_int(m, p, "n_indicators"));
    c.random_slope = get_bool_or(m, p, "random_slope", true);
  } else if (c.name == "ar1_latent" || c.name == "cross_classified" || c.name == "dsem" ||
             c.name == "dlcsem_sudden_gain") {
    only_keys(m, p, {"builder", "centering", "n_indicators"});
    c.n_indicators = static_cast<int>(get_int(m, p, "n_indicators"));
    c.random_slope = c.name != "ar1_latent";
  } else if (c.name == "dlcsem_fusion") {
    only_keys(m, p, {"builder", "centering", "swap_states"});
    c.n_indicators = 9;
    c.swap_states = get_bool_or(m, p, "swap_states", false);
  } else {
    throw ParseError("model.builder", "unknown builder '" + c.name + "'");
  }
  return c;
}

json builder_json(const BuilderCall& c, bool centering) {
  json m;
  m["builder"] = c.name;
  if (c.name == "cfa") {
    m["n_factors"] = c.n_factors;
    m["indicators_per_factor"] = c.indicators_per_factor;
  } else if (c.name == "two_level") {
    m["n_indicators"] = c.n_indicators;
    m["random_slope"] = c.random_slope;
  } else if (c.name == "dlcsem_fusion") {
    m["swap_states"] = c.swap_states;
  } else if (c.name != "ar1_observed") {
    m["n_indicators"] = c.n_indicators;
  }
  m["centering"] = centering;
  return m;
}

Eigen::MatrixXd matrix_from_json(const json& v, const std::string& path) {
  if (v.is_string() && v.get<std::string>() == "identity") return Eigen::MatrixXd();
  if (!v.is_array() || v.empty()) throw ParseError(path, "expected \"identity\" or a square matrix");
  const auto n = static_cast<Eigen::Index>(v.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const json& row = v.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
      throw ParseError(path, "matrix must be square");
    for (Eigen::Index c = 0; c < n; ++c) {
      const json& x = row.at(static_cast<std::size_t>(c));
      if (!x.is_number()) throw ParseError(path, "matrix entries must be numbers");
      m(r, c) = x.get<double>();
    }
  }
  return m;
}

void apply_states(const json& s, StateOptions& opts, bool& seen) {
  only_keys(s, "states", {"n_states", "p21_fixed", "tie_state_variances"});
  seen = true;
  opts.n_states = static_cast<int>(get_int_or(s, "states", "n_states", opts.n_states));
  if (s.contains("p21_fixed") && !s.at("p21_fixed").is_null())
    opts.p21_fixed = get_number(s, "states", "p21_fixed");
  opts.tie_state_variances = get_bool_or(s, "states", "tie_state_variances", true);
  if (opts.n_states < 1 || opts.n_states > 2)
    throw ParseError("states.n_states", "only 1 or 2 states supported");
  if (opts.p21_fixed && !(*opts.p21_fixed >= 0.0 && *opts.p21_fixed <= 1.0))
    throw ParseError("states.p21_fixed", "must lie in [0, 1]");
}

SamplerSettings parse_sampler(const json& s) {
  only_keys(s, "sampler", {"chains", "iterations", "burn_in", "thinning", "seed"});
  SamplerSettings out;
  out.chains = static_cast<int>(get_int_or(s, "sampler", "chains", out.chains));
  out.iterations = get_int_or(s, "sampler", "iterations", out.iterations);
  out.burn_in = get_int_or(s, "sampler", "burn_in", out.burn_in);
  out.thinning = static_cast<int>(get_int_or(s, "sampler", "thinning", out.thinning));
  if (s.contains("seed")) {
    const json& v = s.at("seed");
    if (v.is_number_unsigned())
      out.seed = v.get<std::uint64_t>();
    else if (v.is_number_integer() && v.get<long long>() >= 0)
      out.seed = static_cast<std::uint64_t>(v.get<long long>());
    else
      throw ParseError("sampler.seed", "expected a non-negative integer");
  }
  check_settings(out);
  return out;
}

}  // namespace

void check_settings(const SamplerSettings& s) {
  if (s.chains < 1) throw ParseError("sampler.chains", "need at least one chain");
  if (s.iterations < 1) throw ParseError("sampler.iterations", "need at least one iteration");
  if (s.burn_in < 0) throw ParseError("sampler.burn_in", "must be >= 0");
  if (s.burn_in >= s.iterations) throw ParseError("sampler.burn_in", "must be below iterations");
  if (s.thinning < 1) throw ParseError("sampler.thinning", "must be >= 1");
}

json prior_to_json(const DistributionParams& prior) {
  return std::visit(
      [](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        json j;
        if constexpr (std::is_same_v<T, Normal>) {
          j = {{"family", "normal"}, {"mean", d.mean}, {"precision", d.precision}};
        } else if constexpr (std::is_same_v<T, TruncNormal>) {
          j = {{"family", "truncnormal"}, {"mean", d.mean}, {"precision", d.precision},
               {"lower", bound_json(d.lower)}, {"upper", bound_json(d.upper)}};
        } else if constexpr (std::is_same_v<T, Gamma>) {
          j = {{"family", "gamma"}, {"shape", d.shape}, {"rate", d.rate}};
        } else if constexpr (std::is_same_v<T, Uniform>) {
          j = {{"family", "uniform"}, {"lower", d.lower}, {"upper", d.upper}};
        } else if constexpr (std::is_same_v<T, Wishart>) {
          json rows = json::array();
          for (Eigen::Index r = 0; r < d.scale_inverse.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < d.scale_inverse.cols(); ++c) row.push_back(d.scale_inverse(r, c));
            rows.push_back(row);
          }
          j = {{"family", "wishart"}, {"scale_inverse", rows}, {"df", d.df}};
        } else if constexpr (std::is_same_v<T, MvNormal>) {
          j = {{"family", "mvnormal"}};
        } else {
          j = {{"family", "categorical"}, {"probs", d.probs}};
        }
        return j;
      },
      prior);
}

DistributionParams prior_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object with a 'family' key");
  if (!j.contains("family") || !j.at("family").is_string())
    throw ParseError(path + ".family", "missing or non-string family");
  const std::string fam = j.at("family").get<std::string>();
  DistributionParams out;
  if (fam == "normal") {
    only_keys(j, path, {"family", "mean", "precision"});
    out = Normal{get_number(j, path, "mean"), get_number(j, path, "precision")};
  } else if (fam == "truncnormal") {
    only_keys(j, path, {"family", "mean", "precision", "lower", "upper"});
    out = TruncNormal{get_number(j, path, "mean"), get_number(j, path, "precision"),
                      bound(j, path, "lower", -kInf), bound(j, path, "upper", kInf)};
  } else if (fam == "gamma") {
    only_keys(j, path, {"family", "shape", "rate"});
    out = Gamma{get_number(j, path, "shape"), get_number(j, path, "rate")};
  } else if (fam == "uniform") {
    only_keys(j, path, {"family", "lower", "upper"});
    out = Uniform{get_number(j, path, "lower"), get_number(j, path, "upper")};
  } else if (fam == "wishart") {
    only_keys(j, path, {"family", "scale_inverse", "df"});
    if (!j.contains("scale_inverse")) throw ParseError(path + ".scale_inverse", "missing required key");
    out = Wishart{matrix_from_json(j.at("scale_inverse"), path + ".scale_inverse"),
                  get_number(j, path, "df")};
  } else {
    throw ParseError(path + ".family", "unsupported prior family '" + fam + "'");
  }
  return out;
}

ModelConfig parse_model_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::string msg = e.what();
    if (auto pos = msg.find("syntax error"); pos != std::string::npos) msg = msg.substr(pos);
    throw ParseError("line " + std::to_string(line_of(text, e.byte > 0 ? e.byte - 1 : 0)), msg);
  }
  only_keys(doc, "", {"model", "priors", "states", "sampler"});
  if (!doc.contains("model")) throw ParseError("model", "missing required key");
  const json& m = doc.at("model");
  const BuilderCall call = parse_builder(m);

  StateOptions opts;
  bool states_seen = false;
  const bool multi_state = call.name == "dlcsem_sudden_gain" || call.name == "dlcsem_fusion";
  opts.n_states = multi_state ? 2 : 1;
  if (doc.contains("states")) {
    if (!multi_state) {
      StateOptions probe;
      probe.n_states = 1;
      apply_states(doc.at("states"), probe, states_seen);
      if (probe.n_states != 1 || probe.p21_fixed)
        throw ParseError("states", "builder '" + call.name + "' has a single state");
    } else {
      apply_states(doc.at("states"), opts, states_seen);
    }
  }

  ModelConfig cfg;
  try {
    cfg.spec = build_from_call(call, opts);
  } catch (const ContractError& e) {
    throw ParseError("model", e.what());
  }
  cfg.spec.centering = get_bool_or(m, "model", "centering", true);

  if (doc.contains("priors")) {
    const json& pr = doc.at("priors");
    if (!pr.is_object()) throw ParseError("priors", "expected an object");
    for (const auto& [key, value] : pr.items()) {
      const std::string path = "priors." + key;
      const auto targets = resolve_prior_key(cfg.spec, key);
      if (targets.empty()) throw ParseError(path, "not a parameter block of this model");
      bool hierarchical = false;
      DistributionParams p;
      if (value.is_object() && value.contains("mean") && value.at("mean").is_string()) {
        if (value.at("mean").get<std::string>() != kHierarchicalMean || targets.size() != 1 ||
            targets[0] != "delta_alpha")
          throw ParseError(path + ".mean", "expected a number");
        json copy = value;
        copy["mean"] = 0.0;
        p = prior_from_json(copy, path);
        hierarchical = true;
      } else {
        p = prior_from_json(value, path);
      }
      if (auto* w = std::get_if<Wishart>(&p); w && w->scale_inverse.size() == 0) {
        const auto& target = cfg.spec.priors.at(targets[0]);
        const auto* tw = std::get_if<Wishart>(&target);
        const auto d = tw ? tw->scale_inverse.rows() : 1;
        w->scale_inverse = Eigen::MatrixXd::Identity(d, d);
      }
      try {
        validate(p);
      } catch (const ParameterDomainError& e) {
        throw ParseError(path, e.what());
      }
      for (const auto& t : targets) cfg.spec.priors[t] = p;
      if (std::find(targets.begin(), targets.end(), "delta_alpha") != targets.end())
        cfg.spec.states.delta_hierarchical = hierarchical;
    }
  }
  if (doc.contains("sampler")) cfg.sampler = parse_sampler(doc.at("sampler"));

  const auto problems = validate_spec(cfg.spec);
  if (!problems.empty()) {
    const auto& first = problems.front();
    const auto colon = first.find(": ");
    throw ParseError(first.substr(0, colon), first.substr(colon + 2));
  }
  return cfg;
}

ModelConfig load_model_config(const std::string& path) { return parse_model_config(read_file(path)); }

json config_to_json(const ModelConfig& cfg) {
  const ModelSpec& spec = cfg.spec;
  json doc;
  doc["model"] = builder_json(spec.builder, spec.centering);
  if (spec.builder.name == "dlcsem_sudden_gain" || spec.builder.name == "dlcsem_fusion") {
    json s;
    s["n_states"] = spec.n_states();
    if (spec.states.p21_fixed) s["p21_fixed"] = *spec.states.p21_fixed;
    s["tie_state_variances"] = spec.states.tie_state_variances;
    if (spec.builder.name == "dlcsem_fusion") s.erase("tie_state_variances");
    doc["states"] = s;
  }
  json priors = json::object();
  for (const auto& [key, p] : spec.priors) {
    json j = prior_to_json(p);
    if (key == "delta_alpha" && spec.states.delta_hierarchical) j["mean"] = kHierarchicalMean;
    priors[key] = j;
  }
  doc["priors"] = priors;
  doc["sampler"] = {{"chains", cfg.sampler.chains},
                    {"iterations", cfg.sampler.iterations},
                    {"burn_in", cfg.sampler.burn_in},
                    {"thinning", cfg.sampler.thinning},
                    {"seed", cfg.sampler.seed}};
  return doc;
}

std::string serialize_config(const ModelConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dsemkit
