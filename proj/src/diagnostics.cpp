#include "dsemkit/diagnostics.hpp"

#include "dsemkit/dataset.hpp"
#include "dsemkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsemkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v, double m) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  return format_double(v);
}

// Matrix entry behind the k-th report column of a block.
std::pair<int, int> report_cell(const BlockInfo& b, int k) {
  if (b.shape == Shape::Scalar) return {0, 0};
  if (b.shape == Shape::Vector) return {k, 0};
  int idx = 0;
  for (int r = 0; r < b.dim; ++r)
    for (int c = 0; c <= r; ++c, ++idx)
      if (idx == k) return {r, c};
  return {0, 0};
}

long total_draws(const ChainSeries& s) {
  long n = 0;
  for (const auto& c : s) n += static_cast<long>(c.size());
  return n;
}

}  // namespace

DiagnosticValue compute_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    if (c.size() < 4) throw ContractError("compute_rhat: each chain needs at least 4 draws");
    const std::size_t h = c.size() / 2;
    halves.emplace_back(c.begin(), c.begin() + static_cast<long>(h));
    halves.emplace_back(c.end() - static_cast<long>(h), c.end());
  }
  if (halves.size() < 2) throw ContractError("compute_rhat: needs at least one chain");
  const double n = static_cast<double>(halves[0].size());
  const double m = static_cast<double>(halves.size());
  std::vector<double> means;
  double W = 0.0;
  for (const auto& h : halves) {
    const double mu = mean_of(h);
    means.push_back(mu);
    W += var_of(h, mu);
  }
  W /= m;
  const double grand = mean_of(means);
  double B = 0.0;
  for (double mu : means) B += (mu - grand) * (mu - grand);
  B *= n / (m - 1.0);
  if (!(W > 0.0)) return {1.0, true};
  const double var_plus = (n - 1.0) / n * W + B / n;
  return {std::max(std::sqrt(var_plus / W), 1.0 - 1e-6), false};
}

DiagnosticValue compute_ess(const std::vector<std::vector<double>>& chains) {
  long total = 0;
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) {
    total += static_cast<long>(c.size());
    n = std::min(n, c.size());
  }
  if (chains.empty() || total < 8 || n < 2) throw ContractError("compute_ess: needs at least 8 draws");
  const double m = static_cast<double>(chains.size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const std::vector<double> head(c.begin(), c.begin() + static_cast<long>(n));
    means.push_back(mean_of(head));
    vars.push_back(var_of(head, means.back()));
  }
  const double W = mean_of(vars);
  if (!(W > 0.0)) return {0.0, true};
  const double nd = static_cast<double>(n);
  double B = 0.0;
  if (chains.size() > 1) {
    const double grand = mean_of(means);
    for (double mu : means) B += (mu - grand) * (mu - grand);
    B *= nd / (m - 1.0);
  }
  const double var_plus = (nd - 1.0) / nd * W + B / nd;

  // Autocovariance at lag t averaged over chains (biased estimator).
  auto acov = [&](std::size_t t) {
    double s = 0.0;
    for (std::size_t j = 0; j < chains.size(); ++j) {
      const auto& c = chains[j];
      double a = 0.0;
      for (std::size_t k = 0; k + t < n; ++k) a += (c[k] - means[j]) * (c[k + t] - means[j]);
      s += a / nd;
    }
    return s / m;
  };
  auto rho = [&](std::size_t t) { return 1.0 - (W - acov(t)) / var_plus; };

  double sum = 0.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = (k == 0 ? 1.0 : rho(2 * k)) + rho(2 * k + 1);
    if (pair < 0.0) break;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1e-12);
  const double ess = m * nd / tau;
  return {std::min(ess, static_cast<double>(total)), false};
}

DiagnosticValue compute_ess(const std::vector<double>& draws) {
  return compute_ess(std::vector<std::vector<double>>{draws});
}

double quantile7(std::vector<double> v, double p) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

ParameterSummary summarize_series(const std::string& name, const ChainSeries& series) {
  ParameterSummary s;
  s.name = name;
  std::vector<double> pooled;
  for (const auto& c : series) pooled.insert(pooled.end(), c.begin(), c.end());
  s.mean = mean_of(pooled);
  s.sd = std::sqrt(var_of(pooled, s.mean));
  s.q025 = quantile7(pooled, 0.025);
  s.q975 = quantile7(pooled, 0.975);
  const bool enough_for_rhat =
      !series.empty() && std::all_of(series.begin(), series.end(), [](const auto& c) { return c.size() >= 4; });
  if (enough_for_rhat) {
    const auto r = compute_rhat(series);
    s.rhat = r.value;
    s.degenerate = r.degenerate;
  } else {
    s.rhat = kNaN;
  }
  if (total_draws(series) >= 8 &&
      std::all_of(series.begin(), series.end(), [](const auto& c) { return c.size() >= 2; })) {
    const auto e = compute_ess(series);
    s.ess = e.value;
    s.degenerate = s.degenerate || e.degenerate;
  } else {
    s.ess = kNaN;
  }
  return s;
}

std::vector<ChainSeries> report_series(const DrawStore& store, const ModelSpec& spec) {
  const CompiledIndex index = compile_index(spec);
  if (index.columns() != store.columns)
    throw ContractError("integrity: draw columns do not match the stored model");
  const auto report = index.report_columns();
  std::vector<ChainSeries> out(report.size(), ChainSeries(static_cast<std::size_t>(store.n_chains())));
  ModelParams p = shaped_params(spec);
  for (int c = 0; c < store.n_chains(); ++c) {
    for (auto& s : out) s[c].reserve(static_cast<std::size_t>(store.n_draws));
    for (long d = 0; d < store.n_draws; ++d) {
      const double* row = &store.chains[c].draws[static_cast<std::size_t>(d) * store.columns.size()];
      unflatten(spec, index, row, p);
      std::size_t col = 0;
      for (const auto& b : index.blocks) {
        if (b.transform == Transform::Identity) {
          for (int k = 0; k < b.size(); ++k) out[col++][c].push_back(row[b.offset + k]);
          continue;
        }
        const Eigen::MatrixXd v = report_value(b, p);
        for (int k = 0; k < static_cast<int>(b.report_columns.size()); ++k) {
          const auto [r, q] = report_cell(b, k);
          out[col++][c].push_back(v(r, q));
        }
      }
    }
  }
  return out;
}

std::vector<ParameterSummary> summarize(const DrawStore& store, const ModelSpec& spec) {
  if (store.n_draws < 1 || store.n_chains() < 1) throw ContractError("summarize: no draws");
  const auto names = compile_index(spec).report_columns();
  const auto series = report_series(store, spec);
  std::vector<ParameterSummary> out;
  out.reserve(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) out.push_back(summarize_series(names[k], series[k]));
  return out;
}

double standardized_loading(double lambda, double factor_variance, double residual_variance) {
  const double denom = std::sqrt(lambda * lambda * factor_variance + residual_variance);
  if (!(denom > 0.0)) return 0.0;
  return std::clamp(lambda * std::sqrt(factor_variance) / denom, -1.0, 1.0);
}

StandardizedSeries standardized_loadings(const DrawStore& store, const ModelSpec& spec) {
  StandardizedSeries out;
  if (spec.observed) return out;
  const CompiledIndex index = compile_index(spec);
  if (index.columns() != store.columns)
    throw ContractError("integrity: draw columns do not match the stored model");

  struct Cell {
    int set, state, j, k;
  };
  std::vector<Cell> cells;
  for (int m = 0; m < static_cast<int>(spec.measurement.size()); ++m) {
    int state = -1;
    for (int s = 0; s < spec.n_states(); ++s)
      if (spec.processes[s].measurement_set == m) {
        state = s;
        break;
      }
    if (state < 0) continue;
    std::string suffix;
    for (const auto& b : index.blocks)
      if (b.role == Role::Lambda && b.set == m) suffix = b.name.substr(std::string("lambda").size());
    const auto& pat = spec.measurement[m];
    const int K = pat.n_factors();
    for (int j = 0; j < spec.n_indicators; ++j)
      for (int k = 0; k < K; ++k) {
        const auto& e = pat.loadings[j][k];
        if (!e.free && e.value == 0.0) continue;
        cells.push_back({m, state, j, k});
        std::string name = "lambda_std" + suffix + "[" + std::to_string(j + 1);
        if (K > 1) name += "," + std::to_string(k + 1);
        out.names.push_back(name + "]");
      }
  }
  out.series.assign(cells.size(), ChainSeries(static_cast<std::size_t>(store.n_chains())));
  ModelParams p = shaped_params(spec);
  for (int c = 0; c < store.n_chains(); ++c) {
    for (long d = 0; d < store.n_draws; ++d) {
      unflatten(spec, index, &store.chains[c].draws[static_cast<std::size_t>(d) * store.columns.size()], p);
      for (std::size_t q = 0; q < cells.size(); ++q) {
        const Cell& cell = cells[q];
        const auto& ps = spec.processes[cell.state];
        const Eigen::MatrixXd within = p.psi_eta[ps.variance_set].inverse();
        double v = within(cell.k, cell.k);
        if (spec.ar_order == 1) {
          const double b = p.beta[cell.state](cell.k);
          v /= (1.0 - b * b);
        }
        if (ps.effect_group >= 0 && spec.effect_groups[ps.effect_group].intercept)
          v += p.psi_zeta2[ps.effect_group].inverse()(cell.k, cell.k);
        const double lam = p.lambda[cell.set](cell.j, cell.k);
        const double resid = 1.0 / p.psi_y[ps.residual_set](cell.j);
        out.series[q][c].push_back(standardized_loading(lam, v, resid));
      }
    }
  }
  return out;
}

std::vector<ParameterSummary> standardize_loadings(const DrawStore& store, const ModelSpec& spec) {
  const auto s = standardized_loadings(store, spec);
  std::vector<ParameterSummary> out;
  for (std::size_t k = 0; k < s.names.size(); ++k) out.push_back(summarize_series(s.names[k], s.series[k]));
  return out;
}

std::string summary_csv(const std::vector<ParameterSummary>& rows) {
  std::string out = "parameter,mean,sd,q2.5,q97.5,rhat,ess\n";
  for (const auto& r : rows) {
    out += csv_field(r.name) + ',' + fmt(r.mean) + ',' + fmt(r.sd) + ',' + fmt(r.q025) + ',' + fmt(r.q975) + ',' +
           fmt(r.rhat) + ',' + fmt(r.ess) + '\n';
  }
  return out;
}

nlohmann::json summary_json(const std::vector<ParameterSummary>& rows) {
  nlohmann::json out = nlohmann::json::array();
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  for (const auto& r : rows)
    out.push_back({{"parameter", r.name},
                   {"mean", num(r.mean)},
                   {"sd", num(r.sd)},
                   {"q2.5", num(r.q025)},
                   {"q97.5", num(r.q975)},
                   {"rhat", num(r.rhat)},
                   {"ess", num(r.ess)},
                   {"degenerate", r.degenerate}});
  return out;
}

std::vector<std::string> convergence_flags(const std::vector<ParameterSummary>& rows, double threshold) {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (!std::isnan(r.rhat) && r.rhat > threshold) out.push_back(r.name);
  return out;
}

StateReport state_report(const DrawStore& store) {
  if (store.n_states != 2) throw ContractError("state report needs a two-state fit (this fit has one state)");
  StateReport r;
  r.n_patients = store.n_patients;
  r.n_times = store.n_times;
  const std::size_t NT = static_cast<std::size_t>(store.n_patients) * store.n_times;
  std::vector<long> count2(NT, 0);
  std::vector<double> tsum(NT, 0.0);
  long draws = 0;
  for (const auto& ch : store.chains) {
    for (long d = 0; d < store.n_draws; ++d)
      for (std::size_t c = 0; c < NT; ++c)
        if (ch.states[static_cast<std::size_t>(d) * NT + c] == 2) ++count2[c];
    for (std::size_t c = 0; c < NT && c < ch.transition_sum.size(); ++c) tsum[c] += ch.transition_sum[c];
    draws += store.n_draws;
  }
  const double nd = static_cast<double>(std::max(draws, 1L));
  r.p_state2.resize(NT);
  r.mode.resize(NT);
  r.p_transition.resize(NT);
  for (std::size_t c = 0; c < NT; ++c) {
    r.p_state2[c] = static_cast<double>(count2[c]) / nd;
    r.mode[c] = 2 * count2[c] > draws ? 2 : 1;
    r.p_transition[c] = tsum[c] / nd;
  }
  r.switch_time.assign(static_cast<std::size_t>(store.n_patients), std::nullopt);
  r.switch_fraction.assign(static_cast<std::size_t>(store.n_times), 0.0);
  r.mean_transition.assign(static_cast<std::size_t>(store.n_times), 0.0);
  for (int i = 0; i < store.n_patients; ++i)
    for (int t = 0; t < store.n_times; ++t) {
      const std::size_t c = static_cast<std::size_t>(i) * store.n_times + t;
      if (r.mode[c] == 2 && !r.switch_time[i]) r.switch_time[i] = t;
      r.switch_fraction[t] += r.mode[c] == 2 ? 1.0 : 0.0;
      r.mean_transition[t] += r.p_transition[c];
    }
  for (int t = 0; t < store.n_times; ++t) {
    r.switch_fraction[t] /= store.n_patients;
    r.mean_transition[t] /= store.n_patients;
  }
  return r;
}

std::string state_probs_csv(const StateReport& r, const DrawStore& store) {
  std::string out = "patient,time,p_state2\n";
  for (int i = 0; i < r.n_patients; ++i)
    for (int t = 0; t < r.n_times; ++t)
      out += store.patient_ids[i] + ',' + store.time_ids[t] + ',' +
             fmt(r.p_state2[static_cast<std::size_t>(i) * r.n_times + t]) + '\n';
  return out;
}

std::string switch_times_csv(const StateReport& r, const DrawStore& store) {
  std::string out = "patient,switch_time\n";
  for (int i = 0; i < r.n_patients; ++i)
    out += store.patient_ids[i] + ',' + (r.switch_time[i] ? store.time_ids[*r.switch_time[i]] : "none") + '\n';
  return out;
}

std::string switch_fraction_csv(const StateReport& r, const DrawStore& store) {
  std::string out = "time,switch_fraction,mean_p_transition\n";
  for (int t = 0; t < r.n_times; ++t)
    out += store.time_ids[t] + ',' + fmt(r.switch_fraction[t]) + ',' + fmt(r.mean_transition[t]) + '\n';
  return out;
}

std::string transition_probs_csv(const StateReport& r, const DrawStore& store) {
  std::string out = "patient,time,p_transition\n";
  for (int i = 0; i < r.n_patients; ++i)
    for (int t = 0; t < r.n_times; ++t)
      out += store.patient_ids[i] + ',' + store.time_ids[t] + ',' +
             fmt(r.p_transition[static_cast<std::size_t>(i) * r.n_times + t]) + '\n';
  return out;
}

}  // namespace dsemkit
