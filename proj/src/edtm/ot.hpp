#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace edtm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Dense non-negative document x label cost table. Construction rejects
// empty shapes and negative or non-finite entries.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix values);

  std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const { return values_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  // Columns `keep`, in the given order.
  CostMatrix select_columns(const std::vector<std::size_t>& keep) const;
  CostMatrix select_rows(const std::vector<std::size_t>& keep) const;

 private:
  Matrix values_;
};

// Probability weights over points: non-negative, summing to one within 1e-9.
// For partial solves the weights act as per-point capacities.
class Marginal {
 public:
  explicit Marginal(Vector weights);

  static Marginal uniform(std::size_t n);

  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  const Vector& weights() const { return weights_; }
  double operator[](std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }

 private:
  Vector weights_;
};

struct TransportPlan {
  Matrix values;
  double total_mass = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  // Max marginal-constraint violation at exit. For partial solves this also
  // covers the last-cycle plan change (see sinkhorn_partial).
  double residual = 0.0;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

struct SolverConfig {
  double lambda = 1.0;  // entropy weight; larger is closer to exact transport
  std::size_t max_iters = 1000;
  double tolerance = 1e-8;
  std::optional<double> mass_p;  // set for partial solves, in (0, 1]

  void validate() const;
};

namespace ot {

// Entropy-regularized transport over the complete feasible set: row sums equal
// `a`, column sums equal `b`. Log-domain scaling updates; a plan that does not
// reach `cfg.tolerance` within `cfg.max_iters` is returned with
// converged == false.
TransportPlan sinkhorn_complete(const CostMatrix& cost, const Marginal& a,
                                const Marginal& b, const SolverConfig& cfg);

// Entropy-regularized partial transport: row sums <= a, column sums <= b,
// total mass == cfg.mass_p. Dykstra-corrected KL projections onto the row
// caps, column caps and the mass constraint, kept in log-potential form.
// Converged when caps hold within tolerance and the plan moved by at most
// tolerance (max-norm) over the last cycle.
TransportPlan sinkhorn_partial(const CostMatrix& cost, const Marginal& a,
                               const Marginal& b, const SolverConfig& cfg);

// <C, Q>.
double wasserstein_cost(const TransportPlan& plan, const CostMatrix& cost);

}  // namespace ot
}  // namespace edtm
