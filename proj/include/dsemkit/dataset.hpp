#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dsemkit {

enum class Layout { Long, Wide };

Layout parse_layout(std::string_view name);
const char* layout_name(Layout layout);

// Panel of indicator values indexed (patient, time, indicator), 0-based
// internally. Ids record the original labels behind the dense indices.
struct Dataset {
  int n_patients = 0;
  int n_times = 0;
  int n_indicators = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  std::vector<std::string> patient_ids;
  std::vector<std::string> time_ids;

  static Dataset empty(int n_patients, int n_times, int n_indicators);

  std::size_t cell(int i, int t, int j) const {
    return (static_cast<std::size_t>(i) * n_times + t) * n_indicators + j;
  }
  double value(int i, int t, int j) const { return values[cell(i, t, j)]; }
  bool is_observed(int i, int t, int j) const { return observed[cell(i, t, j)] != 0; }
  void set(int i, int t, int j, double v) {
    values[cell(i, t, j)] = v;
    observed[cell(i, t, j)] = 1;
  }
  void mask(int i, int t, int j) {
    values[cell(i, t, j)] = 0.0;
    observed[cell(i, t, j)] = 0;
  }
  std::size_t n_observed() const;
};

// Dimension and completeness problems; empty when the dataset is usable.
std::vector<std::string> validate_dataset(const Dataset& data);

// Throws IngestError (with the offending line) or IoError.
Dataset load_dataset(const std::string& path, Layout layout);
Dataset parse_dataset(std::string_view text, Layout layout);

std::string format_dataset(const Dataset& data, Layout layout);
void write_dataset(const Dataset& data, const std::string& path, Layout layout);

// CSV field with RFC 4180 quoting when it contains a comma or quote.
std::string csv_field(std::string_view s);

// Shortest text that reads back to the same double.
std::string format_double(double v);

// Whole-file write through a temporary and a rename.
void write_file_atomic(const std::string& path, std::string_view content);
std::string read_file(const std::string& path);

}  // namespace dsemkit
