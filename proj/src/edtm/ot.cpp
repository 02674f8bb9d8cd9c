#include "edtm/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "edtm/error.hpp"

namespace edtm {

namespace {

using Index = Eigen::Index;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kAnnealStart = 16.0;
constexpr double kAnnealFactor = 4.0;
// Intermediate stages only need rough potentials: column error within this
// fraction of the smallest positive column weight.
constexpr double kStageRelTolerance = 1e-2;

std::vector<Index> positive_support(const Vector& w) {
  std::vector<Index> out;
  for (Index i = 0; i < w.size(); ++i) {
    if (w(i) > 0.0) out.push_back(i);
  }
  return out;
}

Vector safe_log(const Vector& w) {
  Vector out(w.size());
  for (Index i = 0; i < w.size(); ++i) out(i) = w(i) > 0.0 ? std::log(w(i)) : kNegInf;
  return out;
}

void check_shapes(const CostMatrix& cost, const Marginal& a, const Marginal& b) {
  if (cost.rows() != a.size() || cost.cols() != b.size()) {
    std::ostringstream os;
    os << "dimension mismatch: cost is " << cost.rows() << "x" << cost.cols()
       << " but marginals have sizes " << a.size() << " and " << b.size();
    fail(ErrorKind::Input, os.str());
  }
}

// log sum_j exp(pot[j] + logk(i, j)) over active columns.
double row_lse(const Matrix& logk, Index i, const Vector& pot,
               const std::vector<Index>& cols) {
  double hi = kNegInf;
  for (Index j : cols) hi = std::max(hi, pot(j) + logk(i, j));
  if (hi == kNegInf) return kNegInf;
  double sum = 0.0;
  for (Index j : cols) sum += std::exp(pot(j) + logk(i, j) - hi);
  return hi + std::log(sum);
}

// out[j] = log sum_i exp(pot[i] + logk(i, j)) over active rows; row-major
// traversal, fixed reduction order.
void column_lse(const Matrix& logk, const Vector& pot, const std::vector<Index>& rows,
                const std::vector<Index>& cols, Vector& out) {
  Vector hi = Vector::Constant(logk.cols(), kNegInf);
  for (Index i : rows) {
    for (Index j : cols) hi(j) = std::max(hi(j), pot(i) + logk(i, j));
  }
  Vector sum = Vector::Zero(logk.cols());
  for (Index i : rows) {
    for (Index j : cols) sum(j) += std::exp(pot(i) + logk(i, j) - hi(j));
  }
  out = Vector::Constant(logk.cols(), kNegInf);
  for (Index j : cols) {
    if (hi(j) != kNegInf) out(j) = hi(j) + std::log(sum(j));
  }
}

Matrix plan_from_potentials(const Matrix& logk, const Vector& f, const Vector& g,
                            double shift) {
  Matrix q(logk.rows(), logk.cols());
  for (Index i = 0; i < logk.rows(); ++i) {
    for (Index j = 0; j < logk.cols(); ++j) {
      const double e = f(i) + g(j) + shift + logk(i, j);
      q(i, j) = e == kNegInf ? 0.0 : std::exp(e);
    }
  }
  return q;
}

void require_finite_plan(const Matrix& q) {
  if (!q.allFinite()) {
    fail(ErrorKind::Solver, "transport plan has non-finite entries; lambda times the cost range is too large");
  }
}

void require_finite(const Vector& pot, const std::vector<Index>& support, const char* what) {
  for (Index k : support) {
    if (!std::isfinite(pot(k))) {
      std::ostringstream os;
      os << "non-finite " << what << " potential at index " << k
         << "; inputs overflowed the log-domain updates";
      fail(ErrorKind::Solver, os.str());
    }
  }
}

double complete_residual(const Matrix& q, const Marginal& a, const Marginal& b) {
  const Vector rows = q.rowwise().sum();
  const Vector cols = q.colwise().sum().transpose();
  return std::max((rows - a.weights()).cwiseAbs().maxCoeff(),
                  (cols - b.weights()).cwiseAbs().maxCoeff());
}

// Entropy weights visited before the target one. Large lambda * cost-range
// makes plain scaling updates crawl when the optimum is nearly degenerate, so
// the solve starts where lambda * range is modest and steps up to the
// target, warm-starting each stage from the previous potentials.
std::vector<double> annealing_schedule(double lambda, double range) {
  std::vector<double> out{lambda};
  while (out.front() * range > kAnnealStart) out.insert(out.begin(), out.front() / kAnnealFactor);
  return out;
}

}  // namespace

CostMatrix::CostMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() < 1 || values_.cols() < 1) {
    fail(ErrorKind::Input, "cost matrix must have at least one row and one column");
  }
  for (Index i = 0; i < values_.rows(); ++i) {
    for (Index j = 0; j < values_.cols(); ++j) {
      const double c = values_(i, j);
      if (!std::isfinite(c) || c < 0.0) {
        std::ostringstream os;
        os << "cost entry (" << i << ", " << j << ") = " << c
           << " is not a finite non-negative value";
        fail(ErrorKind::Input, os.str());
      }
    }
  }
}

CostMatrix CostMatrix::select_columns(const std::vector<std::size_t>& keep) const {
  Matrix out(values_.rows(), static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    if (keep[k] >= cols()) fail(ErrorKind::Input, "column index out of range");
    out.col(static_cast<Index>(k)) = values_.col(static_cast<Index>(keep[k]));
  }
  return CostMatrix(std::move(out));
}

CostMatrix CostMatrix::select_rows(const std::vector<std::size_t>& keep) const {
  Matrix out(static_cast<Index>(keep.size()), values_.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    if (keep[k] >= rows()) fail(ErrorKind::Input, "row index out of range");
    out.row(static_cast<Index>(k)) = values_.row(static_cast<Index>(keep[k]));
  }
  return CostMatrix(std::move(out));
}

Marginal::Marginal(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() < 1) fail(ErrorKind::Input, "marginal must be non-empty");
  for (Index i = 0; i < weights_.size(); ++i) {
    if (!std::isfinite(weights_(i)) || weights_(i) < 0.0) {
      std::ostringstream os;
      os << "marginal weight " << i << " = " << weights_(i) << " is not finite and non-negative";
      fail(ErrorKind::Input, os.str());
    }
  }
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os.precision(17);
    os << "marginal weights sum to " << total << ", expected 1";
    fail(ErrorKind::Input, os.str());
  }
}

Marginal Marginal::uniform(std::size_t n) {
  if (n == 0) fail(ErrorKind::Input, "uniform marginal over zero points");
  return Marginal(Vector::Constant(static_cast<Index>(n), 1.0 / static_cast<double>(n)));
}

void SolverConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    fail(ErrorKind::Input, "solver lambda must be a finite positive value");
  }
  if (!(tolerance > 0.0)) fail(ErrorKind::Input, "solver tolerance must be positive");
  if (max_iters < 1) fail(ErrorKind::Input, "solver max_iters must be at least 1");
  if (mass_p && !(*mass_p > 0.0 && *mass_p <= 1.0)) {
    std::ostringstream os;
    os << "transported mass p = " << *mass_p << " is outside (0, 1]";
    fail(ErrorKind::Input, os.str());
  }
}

namespace ot {

TransportPlan sinkhorn_complete(const CostMatrix& cost, const Marginal& a,
                                const Marginal& b, const SolverConfig& cfg) {
  cfg.validate();
  check_shapes(cost, a, b);

  const auto rows = positive_support(a.weights());
  const auto cols = positive_support(b.weights());
  const Vector log_a = safe_log(a.weights());
  const Vector log_b = safe_log(b.weights());

  // Potentials f, g are kept in cost units; the plan at entropy weight lambda
  // is exp(lambda * (f_i + g_j - C_ij)).
  Vector f = Vector::Zero(static_cast<Index>(cost.rows()));
  Vector g = Vector::Zero(static_cast<Index>(cost.cols()));
  for (Index i = 0; i < f.size(); ++i) if (a.weights()(i) == 0.0) f(i) = kNegInf;
  for (Index j = 0; j < g.size(); ++j) if (b.weights()(j) == 0.0) g(j) = kNegInf;

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (Index i : rows) {
    for (Index j : cols) {
      lo = std::min(lo, cost.values()(i, j));
      hi = std::max(hi, cost.values()(i, j));
    }
  }
  const auto schedule = annealing_schedule(cfg.lambda, hi - lo);
  double min_b = std::numeric_limits<double>::infinity();
  for (Index j : cols) min_b = std::min(min_b, b.weights()(j));

  std::size_t used = 0;
  bool converged = false;
  Matrix logk;
  for (std::size_t stage = 0; stage < schedule.size(); ++stage) {
    const double lambda = schedule[stage];
    const bool last = stage + 1 == schedule.size();
    const double stage_tol =
        last ? cfg.tolerance : std::max(cfg.tolerance, kStageRelTolerance * min_b);
    logk = -lambda * cost.values();
    Vector alpha = lambda * f;
    Vector beta = lambda * g;
    Vector col_lse;
    bool stage_done = false;
    for (std::size_t it = 0; used < cfg.max_iters; ++it) {
      column_lse(logk, alpha, rows, cols, col_lse);
      if (it > 0) {
        // Rows are exact after the previous alpha update; column sums are
        // exp(beta + col_lse).
        double worst = 0.0;
        for (Index j : cols) {
          worst = std::max(worst, std::abs(std::exp(beta(j) + col_lse(j)) - b.weights()(j)));
        }
        if (worst <= stage_tol) {
          stage_done = true;
          break;
        }
      }
      ++used;
      for (Index j : cols) beta(j) = log_b(j) - col_lse(j);
      for (Index i : rows) alpha(i) = log_a(i) - row_lse(logk, i, beta, cols);
      require_finite(alpha, rows, "row");
      require_finite(beta, cols, "column");
    }
    f = alpha / lambda;
    g = beta / lambda;
    if (last) converged = stage_done;
    if (!stage_done && !last) {
      // Budget exhausted mid-schedule; finish at the target weight.
      logk = -cfg.lambda * cost.values();
      break;
    }
  }

  TransportPlan plan;
  plan.values = plan_from_potentials(logk, cfg.lambda * f, cfg.lambda * g, 0.0);
  require_finite_plan(plan.values);
  plan.total_mass = plan.values.sum();
  plan.iterations = used;
  plan.residual = complete_residual(plan.values, a, b);
  plan.converged = converged || plan.residual <= cfg.tolerance;
  return plan;
}

TransportPlan sinkhorn_partial(const CostMatrix& cost, const Marginal& a,
                               const Marginal& b, const SolverConfig& cfg) {
  cfg.validate();
  if (!cfg.mass_p) fail(ErrorKind::Input, "partial solve requires a transported mass p");
  check_shapes(cost, a, b);
  const double p = *cfg.mass_p;
  const double log_p = std::log(p);

  const Matrix logk = -cfg.lambda * cost.values();
  const auto rows = positive_support(a.weights());
  const auto cols = positive_support(b.weights());
  const Vector log_a = safe_log(a.weights());
  const Vector log_b = safe_log(b.weights());

  // Plan is exp(u_i + v_j + w + logk_ij); c_* are the Dykstra corrections of
  // the three projections, which are row-, column- and scalar-valued.
  Vector u = Vector::Zero(logk.rows());
  Vector v = Vector::Zero(logk.cols());
  for (Index i = 0; i < u.size(); ++i) if (a.weights()(i) == 0.0) u(i) = kNegInf;
  for (Index j = 0; j < v.size(); ++j) if (b.weights()(j) == 0.0) v(j) = kNegInf;
  Vector c_row = Vector::Zero(u.size());
  Vector c_col = Vector::Zero(v.size());
  double c_mass = 0.0;

  auto total_lse = [&](double shift) {
    Vector per_row(u.size());
    for (Index i = 0; i < u.size(); ++i) per_row(i) = kNegInf;
    for (Index i : rows) per_row(i) = u(i) + row_lse(logk, i, v, cols);
    double hi = kNegInf;
    for (Index i : rows) hi = std::max(hi, per_row(i));
    double sum = 0.0;
    for (Index i : rows) sum += std::exp(per_row(i) - hi);
    return shift + hi + std::log(sum);
  };

  double w = log_p - total_lse(0.0);
  Matrix previous = plan_from_potentials(logk, u, v, w);

  TransportPlan plan;
  bool converged = false;
  double residual = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  Vector lse;
  while (it < cfg.max_iters) {
    ++it;
    for (Index i : rows) {
      const double x = u(i) + c_row(i);
      const double s = x + w + row_lse(logk, i, v, cols);
      const double t = std::min(log_a(i) - s, 0.0);
      u(i) = x + t;
      c_row(i) = -t;
    }
    const Vector shifted = u.array() + w;
    column_lse(logk, shifted, rows, cols, lse);
    for (Index j : cols) {
      const double y = v(j) + c_col(j);
      const double s = y + lse(j);
      const double t = std::min(log_b(j) - s, 0.0);
      v(j) = y + t;
      c_col(j) = -t;
    }
    {
      const double z = w + c_mass;
      const double t = log_p - total_lse(z);
      w = z + t;
      c_mass = -t;
    }
    require_finite(u, rows, "row");
    require_finite(v, cols, "column");
    if (!std::isfinite(w)) fail(ErrorKind::Solver, "non-finite mass potential");

    Matrix current = plan_from_potentials(logk, u, v, w);
    const Vector row_sums = current.rowwise().sum();
    const Vector col_sums = current.colwise().sum().transpose();
    const double over = std::max({0.0, (row_sums - a.weights()).maxCoeff(),
                                  (col_sums - b.weights()).maxCoeff()});
    const double moved = (current - previous).cwiseAbs().maxCoeff();
    residual = std::max(over, moved);
    previous = std::move(current);
    if (residual <= cfg.tolerance) {
      converged = true;
      break;
    }
  }

  plan.values = std::move(previous);
  require_finite_plan(plan.values);
  plan.total_mass = plan.values.sum();
  plan.iterations = it;
  plan.residual = residual;
  plan.converged = converged;
  return plan;
}

double wasserstein_cost(const TransportPlan& plan, const CostMatrix& cost) {
  if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) {
    std::ostringstream os;
    os << "dimension mismatch: plan is " << plan.rows() << "x" << plan.cols()
       << ", cost is " << cost.rows() << "x" << cost.cols();
    fail(ErrorKind::Input, os.str());
  }
  return plan.values.cwiseProduct(cost.values()).sum();
}

}  // namespace ot
}  // namespace edtm
