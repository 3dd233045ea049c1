#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>
#include <variant>
#include <vector>

namespace dsemkit {

// Seeded random stream. Uniform and normal variates are generated from the
// raw 64-bit engine output with our own transforms, so the draw sequence
// does not depend on the standard library's distribution implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0);

  // Independent sub-stream for a derivation key (chain id, block id, ...).
  RandomStream derive(std::uint64_t key) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Distribution families, all in precision parameterization.
struct Normal {
  double mean = 0.0;
  double precision = 1.0;
  bool operator==(const Normal&) const = default;
};
struct TruncNormal {
  double mean = 0.0;
  double precision = 1.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool operator==(const TruncNormal&) const = default;
};
struct MvNormal {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
  bool operator==(const MvNormal& o) const {
    return mean.size() == o.mean.size() && precision.rows() == o.precision.rows() &&
           mean == o.mean && precision == o.precision;
  }
};
struct Gamma {
  double shape = 1.0;
  double rate = 1.0;
  bool operator==(const Gamma&) const = default;
};
// Scale-inverse (JAGS `dwish(R, k)`) parameterization: E[X] = df * R^{-1}.
struct Wishart {
  Eigen::MatrixXd scale_inverse;
  double df = 1.0;
  bool operator==(const Wishart& o) const {
    return df == o.df && scale_inverse.rows() == o.scale_inverse.rows() &&
           scale_inverse == o.scale_inverse;
  }
};
struct Categorical {
  std::vector<double> probs;
  bool operator==(const Categorical&) const = default;
};
struct Uniform {
  double lower = 0.0;
  double upper = 1.0;
  bool operator==(const Uniform&) const = default;
};

using DistributionParams =
    std::variant<Normal, TruncNormal, MvNormal, Gamma, Wishart, Categorical, Uniform>;

// Categorical draws are 1-based state labels.
using Sample = std::variant<double, int, Eigen::VectorXd, Eigen::MatrixXd>;

const char* family_name(const DistributionParams& params);

// Throws ParameterDomainError when the parameters violate the family's
// constraints.
void validate(const DistributionParams& params);

double sample(RandomStream& rs, const Normal& d);
double sample(RandomStream& rs, const TruncNormal& d);
Eigen::VectorXd sample(RandomStream& rs, const MvNormal& d, std::string_view label = {});
double sample(RandomStream& rs, const Gamma& d);
Eigen::MatrixXd sample(RandomStream& rs, const Wishart& d, std::string_view label = {});
int sample(RandomStream& rs, const Categorical& d);
double sample(RandomStream& rs, const Uniform& d);

// Validating variant dispatch. `label` names the parameter block in
// linear-algebra errors.
Sample draw(RandomStream& rs, const DistributionParams& params, std::string_view label = {});

// Log-density; values outside the support give -infinity. Truncated normal
// includes the truncated-mass renormalization.
double log_density(const DistributionParams& params, const Sample& value);
double log_density(const Normal& d, double x);
double log_density(const TruncNormal& d, double x);
double log_density(const Gamma& d, double x);
double log_density(const Uniform& d, double x);
double log_density(const MvNormal& d, const Eigen::VectorXd& x);
double log_density(const Wishart& d, const Eigen::MatrixXd& x);
double log_density(const Categorical& d, int state);

// Standard normal helpers shared with the sampler.
double std_normal_cdf(double z);
double std_normal_log_cdf(double z);
// log(Phi(b) - Phi(a)) without cancellation in either tail.
double log_normal_mass(double a, double b);
// Inverse-CDF draw from N(0,1) restricted to [a, b]; no rejection loop.
double sample_std_truncated(RandomStream& rs, double a, double b);

// Symmetric positive-definite Cholesky; throws LinearAlgebraError naming `label`.
Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m, std::string_view label);

}  // namespace dsemkit
