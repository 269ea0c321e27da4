#include "unida/bayes_opt.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "unida/error.hpp"

namespace unida {

namespace {

constexpr std::size_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
constexpr double kLengthScales[] = {0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2};
constexpr double kNoise = 1e-6;

/// Unit-cube coordinates, one per parameter (categoricals use one slot).
using UnitPoint = std::vector<double>;

double to_unit(const ParamDomain& p, double v) {
  if (p.log_scale) return (std::log(v) - std::log(p.lo)) / (std::log(p.hi) - std::log(p.lo));
  return (v - p.lo) / (p.hi - p.lo);
}

double from_unit(const ParamDomain& p, double u) {
  u = std::clamp(u, 0.0, 1.0);
  const double v = p.log_scale ? std::exp(std::log(p.lo) + u * (std::log(p.hi) - std::log(p.lo)))
                               : p.lo + u * (p.hi - p.lo);
  return std::clamp(v, p.lo, p.hi);
}

std::size_t choice_index(const ParamDomain& p, double u) {
  const auto k = static_cast<std::size_t>(std::clamp(u, 0.0, 1.0) * static_cast<double>(p.choices.size()));
  return std::min(k, p.choices.size() - 1);
}

Hyperparams decode(const SearchSpace& space, const UnitPoint& u) {
  Hyperparams hp;
  for (std::size_t i = 0; i < space.params.size(); ++i) {
    const ParamDomain& p = space.params[i];
    hp[p.name] = p.kind == ParamDomain::Kind::Continuous ? from_unit(p, u[i]) : p.choices[choice_index(p, u[i])];
  }
  return hp;
}

/// GP input features: continuous in [0, 1], categoricals one-hot.
Eigen::VectorXd features(const SearchSpace& space, const Hyperparams& hp) {
  std::vector<double> f;
  for (const ParamDomain& p : space.params) {
    const auto it = hp.find(p.name);
    if (it == hp.end()) throw ContractError("observation lacks parameter '" + p.name + "'");
    if (p.kind == ParamDomain::Kind::Continuous) {
      f.push_back(std::clamp(to_unit(p, it->second), 0.0, 1.0));
    } else {
      for (double c : p.choices) f.push_back(c == it->second ? 1.0 : 0.0);
    }
  }
  return Eigen::Map<Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
}

double matern52(double r, double length) {
  const double s = std::sqrt(5.0) * r / length;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

struct GaussianProcess {
  Eigen::MatrixXd x;  // n x d
  Eigen::VectorXd alpha;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double length = 0.2;
  double y_mean = 0.0;
  double y_scale = 1.0;

  Eigen::MatrixXd kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double l) const {
    Eigen::MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = matern52((a.row(i) - b.row(j)).norm(), l);
    return k;
  }

  void fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& y) {
    x = inputs;
    y_mean = y.mean();
    const double var = (y.array() - y_mean).square().mean();
    y_scale = var > 1e-24 ? std::sqrt(var) : 1.0;
    const Eigen::VectorXd z = (y.array() - y_mean) / y_scale;
    const auto n = static_cast<double>(y.size());
    double best = -std::numeric_limits<double>::infinity();
    for (double l : kLengthScales) {
      Eigen::MatrixXd k = kernel(x, x, l);
      k.diagonal().array() += kNoise;
      Eigen::LLT<Eigen::MatrixXd> chol(k);
      if (chol.info() != Eigen::Success) continue;
      const Eigen::VectorXd a = chol.solve(z);
      const Eigen::MatrixXd lmat = chol.matrixL();
      const double log_det = 2.0 * lmat.diagonal().array().log().sum();
      const double lml = -0.5 * z.dot(a) - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
      if (lml > best) {
        best = lml;
        length = l;
        alpha = a;
        llt = chol;
      }
    }
    if (!std::isfinite(best)) throw Error("Gaussian process fit failed for every length scale");
  }

  /// Posterior mean and standard deviation in the original objective units.
  std::pair<double, double> predict(const Eigen::VectorXd& q) const {
    Eigen::VectorXd k(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) k(i) = matern52((x.row(i).transpose() - q).norm(), length);
    const double mu = k.dot(alpha);
    const Eigen::VectorXd v = llt.matrixL().solve(k);
    const double var = std::max(0.0, 1.0 + kNoise - v.squaredNorm());
    return {y_mean + y_scale * mu, y_scale * std::sqrt(var)};
  }
};

double expected_improvement(double mu, double sigma, double best, double xi) {
  if (sigma <= 1e-12) return std::max(0.0, mu - best - xi);
  const double z = (mu - best - xi) / sigma;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return (mu - best - xi) * cdf + sigma * pdf;
}

}  // namespace

ParamDomain ParamDomain::continuous(std::string name, double lo, double hi, bool log_scale) {
  ParamDomain p;
  p.name = std::move(name);
  p.kind = Kind::Continuous;
  p.lo = lo;
  p.hi = hi;
  p.log_scale = log_scale;
  return p;
}

ParamDomain ParamDomain::categorical(std::string name, std::vector<double> choices) {
  ParamDomain p;
  p.name = std::move(name);
  p.kind = Kind::Categorical;
  p.choices = std::move(choices);
  return p;
}

void SearchSpace::validate() const {
  std::set<std::string> names;
  for (const ParamDomain& p : params) {
    if (p.name.empty()) throw ConfigError("search parameter without a name");
    if (!names.insert(p.name).second) throw ConfigError("duplicate search parameter '" + p.name + "'");
    if (p.kind == ParamDomain::Kind::Continuous) {
      if (!(std::isfinite(p.lo) && std::isfinite(p.hi) && p.lo < p.hi))
        throw ConfigError("search parameter '" + p.name + "' needs lo < hi");
      if (p.log_scale && p.lo <= 0.0) throw ConfigError("log-scale parameter '" + p.name + "' needs lo > 0");
    } else if (p.choices.empty()) {
      throw ConfigError("categorical parameter '" + p.name + "' has no choices");
    }
  }
}

bool SearchSpace::contains(const Hyperparams& hp) const {
  for (const ParamDomain& p : params) {
    const auto it = hp.find(p.name);
    if (it == hp.end()) return false;
    if (p.kind == ParamDomain::Kind::Continuous) {
      if (!(it->second >= p.lo && it->second <= p.hi)) return false;
    } else if (std::find(p.choices.begin(), p.choices.end(), it->second) == p.choices.end()) {
      return false;
    }
  }
  return true;
}

double radical_inverse(std::size_t index, std::size_t base) {
  double result = 0.0, f = 1.0 / static_cast<double>(base);
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= static_cast<double>(base);
  }
  return result;
}

Hyperparams bayes_suggest(std::span<const Observation> history, const SearchSpace& space, Rng& rng,
                          const BayesOptions& options) {
  if (space.empty()) throw ContractError("bayes_suggest needs a non-empty search space");
  space.validate();
  const std::size_t dims = space.params.size();

  if (history.size() < options.initial_points) {
    Rng shift_rng = rng.derive("halton-shift");
    UnitPoint u(dims);
    for (std::size_t i = 0; i < dims; ++i) {
      const double shift = shift_rng.uniform();
      const double h = radical_inverse(history.size() + 1, kPrimes[i % std::size(kPrimes)]);
      u[i] = std::fmod(h + shift, 1.0);
    }
    return decode(space, u);
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(history.size()), features(space, history[0].params).size());
  Eigen::VectorXd y(static_cast<Eigen::Index>(history.size()));
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < history.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = features(space, history[i].params).transpose();
    y(static_cast<Eigen::Index>(i)) = history[i].score;
    best = std::max(best, history[i].score);
  }
  GaussianProcess gp;
  gp.fit(x, y);

  Hyperparams argmax;
  double best_ei = -1.0;
  UnitPoint u(dims);
  for (std::size_t c = 0; c < options.candidates; ++c) {
    for (double& v : u) v = rng.uniform();
    Hyperparams hp = decode(space, u);
    const auto [mu, sigma] = gp.predict(features(space, hp));
    const double ei = expected_improvement(mu, sigma, best, options.exploration * gp.y_scale);
    if (ei > best_ei) {
      best_ei = ei;
      argmax = std::move(hp);
    }
  }
  return argmax;
}

}  // namespace unida
