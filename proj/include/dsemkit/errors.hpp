#pragma once

#include <stdexcept>
#include <string>

namespace dsemkit {

// Broad failure classes. The C API and the CLI map these onto status and
// exit codes, so every exception thrown by the core carries one.
enum class ErrorKind {
  Config,     // malformed or contradictory model/config input
  Contract,   // inputs parse but violate a documented contract (integrity, dims)
  Io,         // unreadable or unwritable paths
  Numeric,    // NaN contamination, non-PD accumulations
  Domain,     // invalid distribution parameters
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParameterDomainError : public Error {
 public:
  explicit ParameterDomainError(const std::string& what) : Error(ErrorKind::Domain, what) {}
};

class LinearAlgebraError : public Error {
 public:
  explicit LinearAlgebraError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Config/document errors. `path` is a dotted key path ("priors.psi_y") or a
// "line N" locator for syntax errors.
class ParseError : public Error {
 public:
  ParseError(std::string path, const std::string& message)
      : Error(ErrorKind::Config, path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class IngestError : public Error {
 public:
  IngestError(long line, const std::string& message)
      : Error(ErrorKind::Contract, "line " + std::to_string(line) + ": " + message), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

// NaN or other numerical breakdown inside a sweep.
class SamplerError : public Error {
 public:
  SamplerError(std::string block, long iteration, int chain = -1)
      : Error(ErrorKind::Numeric, describe(block, iteration, chain)),
        block_(std::move(block)), iteration_(iteration), chain_(chain) {}
  const std::string& block() const noexcept { return block_; }
  long iteration() const noexcept { return iteration_; }
  int chain() const noexcept { return chain_; }

 private:
  static std::string describe(const std::string& block, long iteration, int chain) {
    std::string s = "non-finite value in block '" + block + "' at iteration " +
                    std::to_string(iteration);
    if (chain >= 0) s += " (chain " + std::to_string(chain + 1) + ")";
    return s;
  }
  std::string block_;
  long iteration_;
  int chain_;
};

}  // namespace dsemkit
