#include "dsemkit/rng.hpp"

#include "dsemkit/errors.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace dsemkit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
// Beyond this many standard deviations erfc underflows; switch to the
// Rayleigh tail form.
constexpr double kFarTail = 30.0;

std::string labelled(std::string_view label, const std::string& msg) {
  if (label.empty()) return msg;
  return "block '" + std::string(label) + "': " + msg;
}

// log Q(z) for the upper tail Q(z) = 1 - Phi(z).
double log_upper_tail(double z) {
  if (z < kFarTail) return std::log(0.5 * boost::math::erfc(z / std::numbers::sqrt2));
  // Asymptotic expansion, accurate to ~1e-3 relative at z = 30 and better beyond.
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z) - 0.5 * kLog2Pi + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

double upper_tail_inverse(double q) {
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RandomStream::RandomStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

RandomStream RandomStream::derive(std::uint64_t key) const {
  return RandomStream(splitmix64(seed_ ^ splitmix64(key + 0x632BE59BD9B4E019ULL)));
}

double RandomStream::uniform() {
  // 53 random bits, shifted by half an ulp so 0 and 1 are excluded.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double std_normal_cdf(double z) {
  return 0.5 * boost::math::erfc(-z / std::numbers::sqrt2);
}

double std_normal_log_cdf(double z) {
  if (z > -kFarTail) return std::log(std_normal_cdf(z));
  return log_upper_tail(-z);
}

double log_normal_mass(double a, double b) {
  if (!(a < b)) return -kInf;
  if (a > 0.0) {
    const double la = log_upper_tail(a);
    if (b == kInf) return la;
    const double lb = log_upper_tail(b);
    return la + std::log1p(-std::exp(lb - la));
  }
  if (b < 0.0) return log_normal_mass(-b, -a);
  return std::log(std_normal_cdf(b) - std_normal_cdf(a));
}

double sample_std_truncated(RandomStream& rs, double a, double b) {
  if (!(a < b)) {
    if (a == b) return a;
    throw ParameterDomainError("truncated normal requires lower < upper");
  }
  double x;
  if (a > 0.0) {
    const double u = rs.uniform();
    if (a > kFarTail) {
      // Density proportional to z*exp(-z^2/2) on [a, b]; indistinguishable
      // from the normal tail this far out.
      const double span = (b == kInf) ? 1.0 : -std::expm1(-0.5 * (b * b - a * a));
      x = std::sqrt(a * a - 2.0 * std::log1p(-u * span));
    } else {
      const double qa = 0.5 * boost::math::erfc(a / std::numbers::sqrt2);
      const double qb = (b == kInf) ? 0.0 : 0.5 * boost::math::erfc(b / std::numbers::sqrt2);
      const double q = qa - u * (qa - qb);
      x = (q <= 0.0) ? a : upper_tail_inverse(q);
    }
  } else if (b < 0.0) {
    return -sample_std_truncated(rs, -b, -a);
  } else {
    const double pa = std_normal_cdf(a);
    const double pb = std_normal_cdf(b);
    const double p = pa + rs.uniform() * (pb - pa);
    x = -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
  }
  return std::clamp(x, a, b);
}

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m, std::string_view label) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw LinearAlgebraError(labelled(label, "matrix must be square and non-empty"));
  if (!m.allFinite()) throw LinearAlgebraError(labelled(label, "matrix has non-finite entries"));
  if (!m.isApprox(m.transpose(), 1e-8))
    throw LinearAlgebraError(labelled(label, "matrix is not symmetric"));
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw LinearAlgebraError(labelled(label, "matrix is not positive definite"));
  return llt;
}

const char* family_name(const DistributionParams& params) {
  static constexpr const char* names[] = {"normal", "truncnormal", "mvnormal", "gamma",
                                          "wishart", "categorical", "uniform"};
  return names[params.index()];
}

void validate(const DistributionParams& params) {
  auto fail = [](const std::string& m) { throw ParameterDomainError(m); };
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Normal>) {
          if (!std::isfinite(d.mean)) fail("normal mean must be finite");
          if (!(d.precision > 0) || !std::isfinite(d.precision)) fail("normal precision must be > 0");
        } else if constexpr (std::is_same_v<T, TruncNormal>) {
          if (!std::isfinite(d.mean)) fail("truncated normal mean must be finite");
          if (!(d.precision > 0) || !std::isfinite(d.precision))
            fail("truncated normal precision must be > 0");
          if (!(d.lower < d.upper)) fail("truncated normal requires lower < upper");
        } else if constexpr (std::is_same_v<T, MvNormal>) {
          if (d.mean.size() != d.precision.rows() || d.precision.rows() != d.precision.cols())
            fail("multivariate normal dimensions disagree");
          if (!d.mean.allFinite()) fail("multivariate normal mean must be finite");
        } else if constexpr (std::is_same_v<T, Gamma>) {
          if (!(d.shape > 0) || !std::isfinite(d.shape)) fail("gamma shape must be > 0");
          if (!(d.rate > 0) || !std::isfinite(d.rate)) fail("gamma rate must be > 0");
        } else if constexpr (std::is_same_v<T, Wishart>) {
          const auto p = d.scale_inverse.rows();
          if (p == 0 || d.scale_inverse.cols() != p) fail("wishart scale must be square");
          if (!(d.df > static_cast<double>(p) - 1.0))
            fail("wishart degrees of freedom must exceed dimension - 1");
        } else if constexpr (std::is_same_v<T, Categorical>) {
          if (d.probs.empty()) fail("categorical needs at least one category");
          double total = 0.0;
          for (double p : d.probs) {
            if (!(p >= 0.0) || !std::isfinite(p)) fail("categorical probabilities must be >= 0");
            total += p;
          }
          if (std::abs(total - 1.0) > 1e-9) fail("categorical probabilities must sum to 1");
        } else if constexpr (std::is_same_v<T, Uniform>) {
          if (!std::isfinite(d.lower) || !std::isfinite(d.upper) || !(d.lower < d.upper))
            fail("uniform requires finite lower < upper");
        }
      },
      params);
}

double sample(RandomStream& rs, const Normal& d) {
  return d.mean + rs.normal() / std::sqrt(d.precision);
}

double sample(RandomStream& rs, const TruncNormal& d) {
  const double sd = 1.0 / std::sqrt(d.precision);
  const double a = (d.lower - d.mean) / sd;
  const double b = (d.upper - d.mean) / sd;
  const double z = sample_std_truncated(rs, a, b);
  return std::clamp(d.mean + sd * z, d.lower, d.upper);
}

Eigen::VectorXd sample(RandomStream& rs, const MvNormal& d, std::string_view label) {
  const auto llt = checked_llt(d.precision, label);
  Eigen::VectorXd z(d.mean.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rs.normal();
  // P = L L^T, so L^{-T} z has covariance P^{-1}.
  return d.mean + llt.matrixU().solve(z);
}

double sample(RandomStream& rs, const Gamma& d) {
  // Marsaglia & Tsang; shape < 1 is boosted by one and corrected.
  if (d.shape < 1.0) {
    const double g = sample(rs, Gamma{d.shape + 1.0, 1.0});
    return g * std::pow(rs.uniform(), 1.0 / d.shape) / d.rate;
  }
  const double dd = d.shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * dd);
  for (;;) {
    double x, v;
    do {
      x = rs.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rs.uniform();
    if (std::log(u) < 0.5 * x * x + dd - dd * v + dd * std::log(v)) return dd * v / d.rate;
  }
}

Eigen::MatrixXd sample(RandomStream& rs, const Wishart& d, std::string_view label) {
  // Bartlett decomposition. With R = L_R L_R^T, M = L_R^{-T} satisfies
  // M M^T = R^{-1}, so W = M A A^T M^T.
  const auto p = d.scale_inverse.rows();
  const auto llt = checked_llt(d.scale_inverse, label);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(sample(rs, Gamma{0.5 * (d.df - static_cast<double>(i)), 0.5}));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rs.normal();
  }
  const Eigen::MatrixXd m = llt.matrixU().solve(a);
  Eigen::MatrixXd w = m * m.transpose();
  return 0.5 * (w + w.transpose());
}

int sample(RandomStream& rs, const Categorical& d) {
  const double u = rs.uniform();
  double acc = 0.0;
  int last_positive = 1;
  for (std::size_t k = 0; k < d.probs.size(); ++k) {
    if (d.probs[k] <= 0.0) continue;
    last_positive = static_cast<int>(k) + 1;
    acc += d.probs[k];
    if (u < acc) return last_positive;
  }
  return last_positive;
}

double sample(RandomStream& rs, const Uniform& d) {
  return d.lower + (d.upper - d.lower) * rs.uniform();
}

Sample draw(RandomStream& rs, const DistributionParams& params, std::string_view label) {
  validate(params);
  return std::visit(
      [&](const auto& d) -> Sample {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, MvNormal> || std::is_same_v<T, Wishart>)
          return sample(rs, d, label);
        else
          return sample(rs, d);
      },
      params);
}

double log_density(const Normal& d, double x) {
  const double r = x - d.mean;
  return 0.5 * std::log(d.precision) - 0.5 * kLog2Pi - 0.5 * d.precision * r * r;
}

double log_density(const TruncNormal& d, double x) {
  if (x < d.lower || x > d.upper) return -kInf;
  const double sd = 1.0 / std::sqrt(d.precision);
  return log_density(Normal{d.mean, d.precision}, x) -
         log_normal_mass((d.lower - d.mean) / sd, (d.upper - d.mean) / sd);
}

double log_density(const Gamma& d, double x) {
  if (x < 0.0) return -kInf;
  if (x == 0.0) {
    if (d.shape == 1.0) return std::log(d.rate);
    return d.shape < 1.0 ? kInf : -kInf;
  }
  return d.shape * std::log(d.rate) - std::lgamma(d.shape) + (d.shape - 1.0) * std::log(x) -
         d.rate * x;
}

double log_density(const Uniform& d, double x) {
  if (x < d.lower || x > d.upper) return -kInf;
  return -std::log(d.upper - d.lower);
}

double log_density(const MvNormal& d, const Eigen::VectorXd& x) {
  const auto llt = checked_llt(d.precision, "mvnormal");
  const Eigen::VectorXd r = x - d.mean;
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * logdet - 0.5 * static_cast<double>(r.size()) * kLog2Pi -
         0.5 * r.dot(d.precision * r);
}

double log_density(const Wishart& d, const Eigen::MatrixXd& x) {
  const auto p = static_cast<double>(d.scale_inverse.rows());
  if (x.rows() != d.scale_inverse.rows() || x.cols() != x.rows()) return -kInf;
  Eigen::LLT<Eigen::MatrixXd> lx(x);
  if (lx.info() != Eigen::Success || !x.isApprox(x.transpose(), 1e-8)) return -kInf;
  const auto lr = checked_llt(d.scale_inverse, "wishart");
  const double logdet_x = 2.0 * lx.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_r = 2.0 * lr.matrixL().toDenseMatrix().diagonal().array().log().sum();
  double lmvgamma = 0.25 * p * (p - 1.0) * std::log(std::numbers::pi);
  for (int j = 1; j <= static_cast<int>(p); ++j) lmvgamma += std::lgamma(0.5 * d.df + 0.5 * (1 - j));
  return 0.5 * (d.df - p - 1.0) * logdet_x - 0.5 * (d.scale_inverse * x).trace() -
         0.5 * d.df * p * std::log(2.0) + 0.5 * d.df * logdet_r - lmvgamma;
}

double log_density(const Categorical& d, int state) {
  if (state < 1 || state > static_cast<int>(d.probs.size())) return -kInf;
  return std::log(d.probs[static_cast<std::size_t>(state - 1)]);
}

double log_density(const DistributionParams& params, const Sample& value) {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, MvNormal>) {
          if (auto v = std::get_if<Eigen::VectorXd>(&value)) return log_density(d, *v);
          throw ParameterDomainError("mvnormal density needs a vector value");
        } else if constexpr (std::is_same_v<T, Wishart>) {
          if (auto m = std::get_if<Eigen::MatrixXd>(&value)) return log_density(d, *m);
          throw ParameterDomainError("wishart density needs a matrix value");
        } else if constexpr (std::is_same_v<T, Categorical>) {
          if (auto k = std::get_if<int>(&value)) return log_density(d, *k);
          throw ParameterDomainError("categorical density needs an integer state");
        } else {
          if (auto x = std::get_if<double>(&value)) return log_density(d, *x);
          if (auto k = std::get_if<int>(&value)) return log_density(d, static_cast<double>(*k));
          throw ParameterDomainError(std::string(family_name(params)) +
                                     " density needs a scalar value");
        }
      },
      params);
}

}  // namespace dsemkit
