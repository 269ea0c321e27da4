#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace unida::ot {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Nonnegative coupling produced by the solvers.
struct TransportPlan {
  Matrix matrix;
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
  double epsilon = 0.0;
  double mass = 0.0;  // requested total mass
  bool converged = false;
  std::size_t iterations = 0;
  // L1 row-marginal violation after each iteration, when requested.
  std::vector<double> violation_history;

  std::vector<double> row_sums() const;
  std::vector<double> col_sums() const;
  double total() const;
};

struct SinkhornOptions {
  double epsilon = 0.1;
  std::size_t max_iter = 1000;
  double tol = 1e-6;
  bool record_history = false;
};

/// Entropic OT, log-domain Sinkhorn. Converges when the sup-norm row marginal
/// violation (columns are exact after every sweep) drops below tol; otherwise
/// returns converged = false after max_iter sweeps.
///
/// Throws ContractError on negative or non-finite marginals, mismatched total
/// masses (beyond 1e-9), non-finite costs, or epsilon <= 0.
TransportPlan sinkhorn(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                       const SinkhornOptions& options = {});

/// Entropic partial OT moving exactly `mass` units, with row sums <= mu and
/// column sums <= nu. Solved as a balanced problem augmented with one slack
/// row and one slack column that absorb the untransported mass.
TransportPlan partial_sinkhorn(const Matrix& cost, std::span<const double> mu, std::span<const double> nu,
                               double mass, const SinkhornOptions& options = {});

/// Column sums of the plan: mass received by each target point.
std::vector<double> transported_mass_per_target(const TransportPlan& plan);

/// <plan, cost>.
double transport_cost(const TransportPlan& plan, const Matrix& cost);

std::vector<double> uniform_marginal(std::size_t n, double total = 1.0);

}  // namespace unida::ot
