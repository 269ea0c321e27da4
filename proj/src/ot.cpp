#include "unida/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "unida/error.hpp"

namespace unida::ot {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double checked_total(std::span<const double> marginal, const char* name) {
  double total = 0.0;
  for (double v : marginal) {
    if (!std::isfinite(v) || v < 0.0) throw ContractError(std::string(name) + " must be finite and nonnegative");
    total += v;
  }
  if (total <= 0.0) throw ContractError(std::string(name) + " must carry positive mass");
  return total;
}

void check_cost(const Matrix& cost, std::size_t n, std::size_t m) {
  if (cost.rows != n || cost.cols != m || cost.data.size() != n * m) {
    throw ContractError("cost matrix shape does not match marginals");
  }
  for (double c : cost.data) {
    if (!std::isfinite(c)) throw ContractError("cost matrix has non-finite entries");
  }
}

// Shared solver core. Marginals are assumed validated.
TransportPlan solve(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                    const SinkhornOptions& opt) {
  const std::size_t n = mu.size(), m = nu.size();
  const double eps = opt.epsilon;
  std::vector<double> log_mu(n), log_nu(m);
  for (std::size_t i = 0; i < n; ++i) log_mu[i] = mu[i] > 0 ? std::log(mu[i]) : kNegInf;
  for (std::size_t j = 0; j < m; ++j) log_nu[j] = nu[j] > 0 ? std::log(nu[j]) : kNegInf;

  std::vector<double> f(n, 0.0), g(m, 0.0), buf(std::max(n, m));
  auto lse = [&buf](std::size_t len) {
    double mx = kNegInf;
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, buf[k]);
    if (mx == kNegInf) return kNegInf;
    double s = 0;
    for (std::size_t k = 0; k < len; ++k) s += std::exp(buf[k] - mx);
    return mx + std::log(s);
  };

  TransportPlan plan;
  plan.matrix = Matrix(n, m);
  plan.row_marginal.assign(mu.begin(), mu.end());
  plan.col_marginal.assign(nu.begin(), nu.end());
  plan.epsilon = eps;

  auto fill_plan = [&] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double e = f[i] + g[j] - cost(i, j);
        plan.matrix(i, j) = (f[i] == kNegInf || g[j] == kNegInf) ? 0.0 : std::exp(e / eps);
      }
  };

  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      if (log_mu[i] == kNegInf) {
        f[i] = kNegInf;
        continue;
      }
      for (std::size_t j = 0; j < m; ++j) buf[j] = (g[j] - cost(i, j)) / eps;
      f[i] = eps * (log_mu[i] - lse(m));
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (log_nu[j] == kNegInf) {
        g[j] = kNegInf;
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) buf[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_nu[j] - lse(n));
    }
    fill_plan();
    double sup = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0;
      for (std::size_t j = 0; j < m; ++j) r += plan.matrix(i, j);
      const double d = std::abs(r - mu[i]);
      sup = std::max(sup, d);
      l1 += d;
    }
    if (opt.record_history) plan.violation_history.push_back(l1);
    plan.iterations = it;
    if (sup < opt.tol) {
      plan.converged = true;
      break;
    }
  }
  if (opt.max_iter == 0) fill_plan();
  plan.mass = plan.total();
  return plan;
}

void check_options(const SinkhornOptions& opt) {
  if (!(opt.epsilon > 0.0) || !std::isfinite(opt.epsilon)) throw ContractError("sinkhorn epsilon must be > 0");
  if (!(opt.tol > 0.0)) throw ContractError("sinkhorn tol must be > 0");
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ContractError("matrix values do not match shape");
}

std::vector<double> TransportPlan::row_sums() const {
  std::vector<double> out(matrix.rows, 0.0);
  for (std::size_t i = 0; i < matrix.rows; ++i)
    for (std::size_t j = 0; j < matrix.cols; ++j) out[i] += matrix(i, j);
  return out;
}

std::vector<double> TransportPlan::col_sums() const {
  std::vector<double> out(matrix.cols, 0.0);
  for (std::size_t i = 0; i < matrix.rows; ++i)
    for (std::size_t j = 0; j < matrix.cols; ++j) out[j] += matrix(i, j);
  return out;
}

double TransportPlan::total() const { return std::accumulate(matrix.data.begin(), matrix.data.end(), 0.0); }

TransportPlan sinkhorn(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                       const SinkhornOptions& options) {
  check_options(options);
  const double smu = checked_total(mu, "row marginal");
  const double snu = checked_total(nu, "column marginal");
  if (std::abs(smu - snu) > 1e-9) throw ContractError("sinkhorn marginals must have equal total mass");
  check_cost(cost, mu.size(), nu.size());
  return solve(cost, mu, nu, options);
}

TransportPlan partial_sinkhorn(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                               double mass, const SinkhornOptions& options) {
  check_options(options);
  const double smu = checked_total(mu, "row marginal");
  const double snu = checked_total(nu, "column marginal");
  check_cost(cost, mu.size(), nu.size());
  const double cap = std::min(smu, snu);
  if (!(mass > 0.0) || mass > cap * (1.0 + 1e-12)) {
    throw ContractError("partial transport mass must lie in (0, min(sum mu, sum nu)]");
  }
  const std::size_t n = mu.size(), m = nu.size();
  // Slack masses below this are treated as absent so full-mass problems
  // reduce exactly to the balanced solver.
  const double slack_floor = 1e-15 * std::max(smu, snu);
  const double slack_row = snu - mass;
  const double slack_col = smu - mass;
  const bool add_row = slack_row > slack_floor;
  const bool add_col = slack_col > slack_floor;
  if (!add_row && !add_col) {
    TransportPlan plan = solve(cost, mu, nu, options);
    plan.mass = mass;
    return plan;
  }

  double cmax = 0.0;
  for (double c : cost.data) cmax = std::max(cmax, std::abs(c));
  // Slack-to-slack transport is priced out so the real block carries `mass`.
  const double forbidden = 2.0 * cmax + 60.0 * options.epsilon + 1.0;

  const std::size_t na = n + (add_row ? 1 : 0), ma = m + (add_col ? 1 : 0);
  Matrix aug(na, ma, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) aug(i, j) = cost(i, j);
  if (add_row && add_col) aug(n, m) = forbidden;
  std::vector<double> amu(mu.begin(), mu.end()), anu(nu.begin(), nu.end());
  if (add_row) amu.push_back(slack_row);
  if (add_col) anu.push_back(slack_col);
  // With a slack on one side only the totals still have to agree.
  if (add_row != add_col) {
    const double diff = std::accumulate(amu.begin(), amu.end(), 0.0) - std::accumulate(anu.begin(), anu.end(), 0.0);
    if (std::abs(diff) > 1e-9) throw ContractError("partial transport marginals are inconsistent");
  }

  TransportPlan full = solve(aug, amu, anu, options);
  TransportPlan plan;
  plan.matrix = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) plan.matrix(i, j) = full.matrix(i, j);
  plan.row_marginal.assign(mu.begin(), mu.end());
  plan.col_marginal.assign(nu.begin(), nu.end());
  plan.epsilon = options.epsilon;
  plan.mass = mass;
  plan.converged = full.converged;
  plan.iterations = full.iterations;
  plan.violation_history = std::move(full.violation_history);
  return plan;
}

std::vector<double> transported_mass_per_target(const TransportPlan& plan) { return plan.col_sums(); }

double transport_cost(const TransportPlan& plan, const Matrix& cost) {
  if (cost.rows != plan.matrix.rows || cost.cols != plan.matrix.cols) {
    throw ContractError("transport_cost: cost shape does not match plan");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < cost.data.size(); ++k) total += plan.matrix.data[k] * cost.data[k];
  return total;
}

std::vector<double> uniform_marginal(std::size_t n, double total) {
  return std::vector<double>(n, total / static_cast<double>(n));
}

}  // namespace unida::ot
