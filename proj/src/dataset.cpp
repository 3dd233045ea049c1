#include "dsemkit/dataset.hpp"

#include "dsemkit/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

namespace dsemkit {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool is_missing(std::string_view s) { return s.empty() || s == "NA"; }

bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

// Dense 0-based codes for labels, ordered numerically when every label is
// a number and lexicographically otherwise.
struct Coder {
  std::vector<std::string> labels;
  std::map<std::string, int> code;

  void add(std::string_view s) {
    if (code.emplace(std::string(s), 0).second) labels.emplace_back(s);
  }
  void finish() {
    bool numeric = true;
    std::vector<double> keys(labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) numeric &= parse_number(labels[k], keys[k]);
    std::vector<std::size_t> order(labels.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    if (numeric)
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
    else
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return labels[a] < labels[b]; });
    std::vector<std::string> sorted;
    for (auto k : order) sorted.push_back(labels[k]);
    labels = std::move(sorted);
    for (std::size_t k = 0; k < labels.size(); ++k) code[labels[k]] = static_cast<int>(k);
  }
  int operator()(std::string_view s) const { return code.at(std::string(s)); }
};

struct Row {
  long line;
  std::vector<std::string_view> fields;
};

std::vector<Row> read_rows(std::string_view text, std::vector<std::string_view>& header) {
  std::vector<Row> rows;
  long line_no = 0;
  std::size_t start = 0;
  bool have_header = false;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!have_header) {
      header = split(line);
      have_header = true;
    } else {
      rows.push_back({line_no, split(line)});
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw IngestError(1, "empty file, expected a header row");
  return rows;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int indicator_label(std::string_view s) {
  std::string_view digits = s;
  if (!digits.empty() && (digits.front() == 'y' || digits.front() == 'Y')) digits.remove_prefix(1);
  int v = 0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) return -1;
  return v;
}

Dataset parse_long(std::string_view text) {
  std::vector<std::string_view> header;
  const auto rows = read_rows(text, header);
  const std::vector<std::string> expect = {"patient", "time", "indicator", "value"};
  if (header.size() != expect.size())
    throw IngestError(1, "long layout header must be patient,time,indicator,value");
  for (std::size_t k = 0; k < expect.size(); ++k)
    if (lower(header[k]) != expect[k])
      throw IngestError(1, "long layout header must be patient,time,indicator,value");

  Coder patients, times, indicators;
  for (const auto& r : rows) {
    if (r.fields.size() != 4)
      throw IngestError(r.line, "expected 4 fields, found " + std::to_string(r.fields.size()));
    if (r.fields[0].empty() || r.fields[1].empty() || r.fields[2].empty())
      throw IngestError(r.line, "patient, time and indicator must be non-empty");
    double tmp;
    if (!parse_number(r.fields[1], tmp))
      throw IngestError(r.line, "non-numeric time '" + std::string(r.fields[1]) + "'");
    if (indicator_label(r.fields[2]) < 0)
      throw IngestError(r.line, "indicator must be an integer or yN, got '" +
                                    std::string(r.fields[2]) + "'");
    patients.add(r.fields[0]);
    times.add(r.fields[1]);
    indicators.add(r.fields[2]);
  }
  patients.finish();
  times.finish();
  // Indicators keep their numeric order (y2 < y10).
  std::vector<std::pair<int, std::string>> ind;
  for (const auto& l : indicators.labels) ind.emplace_back(indicator_label(l), l);
  std::sort(ind.begin(), ind.end());
  std::map<std::string, int> ind_code;
  for (std::size_t k = 0; k < ind.size(); ++k) ind_code[ind[k].second] = static_cast<int>(k);

  Dataset d = Dataset::empty(static_cast<int>(patients.labels.size()),
                             static_cast<int>(times.labels.size()), static_cast<int>(ind.size()));
  d.patient_ids = patients.labels;
  d.time_ids = times.labels;
  std::vector<std::uint8_t> seen(d.values.size(), 0);
  for (const auto& r : rows) {
    const int i = patients(r.fields[0]);
    const int t = times(r.fields[1]);
    const int j = ind_code.at(std::string(r.fields[2]));
    const auto c = d.cell(i, t, j);
    if (seen[c])
      throw IngestError(r.line, "duplicate key (patient " + std::string(r.fields[0]) + ", time " +
                                    std::string(r.fields[1]) + ", indicator " +
                                    std::string(r.fields[2]) + ")");
    seen[c] = 1;
    if (is_missing(r.fields[3])) continue;
    double v;
    if (!parse_number(r.fields[3], v))
      throw IngestError(r.line, "non-numeric value '" + std::string(r.fields[3]) + "'");
    d.set(i, t, j, v);
  }
  return d;
}

Dataset parse_wide(std::string_view text) {
  std::vector<std::string_view> header;
  const auto rows = read_rows(text, header);
  if (header.size() < 3 || lower(header[0]) != "patient" || lower(header[1]) != "time")
    throw IngestError(1, "wide layout header must be patient,time,y1..yJ");
  const int J = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < J; ++j)
    if (lower(header[j + 2]) != "y" + std::to_string(j + 1))
      throw IngestError(1, "wide layout column " + std::to_string(j + 3) + " must be y" +
                               std::to_string(j + 1));

  Coder patients, times;
  for (const auto& r : rows) {
    if (static_cast<int>(r.fields.size()) != J + 2)
      throw IngestError(r.line, "expected " + std::to_string(J + 2) + " fields, found " +
                                    std::to_string(r.fields.size()));
    if (r.fields[0].empty()) throw IngestError(r.line, "patient must be non-empty");
    double tmp;
    if (!parse_number(r.fields[1], tmp))
      throw IngestError(r.line, "non-numeric time '" + std::string(r.fields[1]) + "'");
    patients.add(r.fields[0]);
    times.add(r.fields[1]);
  }
  patients.finish();
  times.finish();
  Dataset d = Dataset::empty(static_cast<int>(patients.labels.size()),
                             static_cast<int>(times.labels.size()), J);
  d.patient_ids = patients.labels;
  d.time_ids = times.labels;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(d.n_patients) * d.n_times, 0);
  for (const auto& r : rows) {
    const int i = patients(r.fields[0]);
    const int t = times(r.fields[1]);
    auto& s = seen[static_cast<std::size_t>(i) * d.n_times + t];
    if (s)
      throw IngestError(r.line, "duplicate key (patient " + std::string(r.fields[0]) + ", time " +
                                    std::string(r.fields[1]) + ")");
    s = 1;
    for (int j = 0; j < J; ++j) {
      const auto f = r.fields[j + 2];
      if (is_missing(f)) continue;
      double v;
      if (!parse_number(f, v))
        throw IngestError(r.line, "non-numeric value '" + std::string(f) + "'");
      d.set(i, t, j, v);
    }
  }
  return d;
}

}  // namespace

Layout parse_layout(std::string_view name) {
  if (name == "long") return Layout::Long;
  if (name == "wide") return Layout::Wide;
  throw ParseError("layout", "expected 'long' or 'wide', got '" + std::string(name) + "'");
}

const char* layout_name(Layout layout) { return layout == Layout::Long ? "long" : "wide"; }

Dataset Dataset::empty(int n_patients, int n_times, int n_indicators) {
  Dataset d;
  d.n_patients = n_patients;
  d.n_times = n_times;
  d.n_indicators = n_indicators;
  const auto n = static_cast<std::size_t>(n_patients) * n_times * n_indicators;
  d.values.assign(n, 0.0);
  d.observed.assign(n, 0);
  for (int i = 0; i < n_patients; ++i) d.patient_ids.push_back(std::to_string(i + 1));
  for (int t = 0; t < n_times; ++t) d.time_ids.push_back(std::to_string(t + 1));
  return d;
}

std::size_t Dataset::n_observed() const {
  return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), 1));
}

std::vector<std::string> validate_dataset(const Dataset& d) {
  std::vector<std::string> out;
  if (d.n_patients < 1 || d.n_times < 1 || d.n_indicators < 1) {
    out.push_back("data: empty panel");
    return out;
  }
  const auto n = static_cast<std::size_t>(d.n_patients) * d.n_times * d.n_indicators;
  if (d.values.size() != n || d.observed.size() != n) {
    out.push_back("data: value array does not match the dimensions");
    return out;
  }
  for (std::size_t c = 0; c < n; ++c)
    if (d.observed[c] && !std::isfinite(d.values[c])) {
      out.push_back("data: non-finite observed value");
      break;
    }
  for (int i = 0; i < d.n_patients; ++i) {
    bool any = false;
    for (int t = 0; t < d.n_times && !any; ++t)
      for (int j = 0; j < d.n_indicators && !any; ++j) any = d.is_observed(i, t, j);
    if (!any) out.push_back("data: patient " + d.patient_ids[i] + " has no observed values");
  }
  return out;
}

Dataset parse_dataset(std::string_view text, Layout layout) {
  Dataset d = layout == Layout::Long ? parse_long(text) : parse_wide(text);
  const auto problems = validate_dataset(d);
  if (!problems.empty()) throw ContractError(problems.front());
  return d;
}

Dataset load_dataset(const std::string& path, Layout layout) {
  return parse_dataset(read_file(path), layout);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_dataset(const Dataset& d, Layout layout) {
  std::string out;
  if (layout == Layout::Long) {
    out += "patient,time,indicator,value\n";
    for (int i = 0; i < d.n_patients; ++i)
      for (int t = 0; t < d.n_times; ++t)
        for (int j = 0; j < d.n_indicators; ++j) {
          out += d.patient_ids[i] + "," + d.time_ids[t] + "," + std::to_string(j + 1) + ",";
          if (d.is_observed(i, t, j)) out += format_double(d.value(i, t, j));
          out += "\n";
        }
    return out;
  }
  out += "patient,time";
  for (int j = 0; j < d.n_indicators; ++j) out += ",y" + std::to_string(j + 1);
  out += "\n";
  for (int i = 0; i < d.n_patients; ++i)
    for (int t = 0; t < d.n_times; ++t) {
      out += d.patient_ids[i] + "," + d.time_ids[t];
      for (int j = 0; j < d.n_indicators; ++j) {
        out += ",";
        if (d.is_observed(i, t, j)) out += format_double(d.value(i, t, j));
      }
      out += "\n";
    }
  return out;
}

void write_dataset(const Dataset& d, const std::string& path, Layout layout) {
  write_file_atomic(path, format_dataset(d, layout));
}

void write_file_atomic(const std::string& path, std::string_view content) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path + "'");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) {
      std::remove(tmp.c_str());
      throw IoError("write failed for '" + path + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace dsemkit
