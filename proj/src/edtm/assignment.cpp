#include "edtm/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "edtm/error.hpp"

namespace edtm {

void BatchSchedule::validate() const {
  if (batch_size < 1) fail(ErrorKind::Input, "batch_size must be at least 1");
  if (epochs < 1) fail(ErrorKind::Input, "epochs must be at least 1");
}

Clustering::Clustering(std::vector<std::int32_t> labels) : labels_(std::move(labels)) {
  for (std::int32_t l : labels_) {
    if (l < kUnassigned) fail(ErrorKind::Input, "negative label index in clustering");
    if (l != kUnassigned) ++assigned_count_;
  }
}

double Clustering::assigned_fraction() const {
  if (labels_.empty()) return 0.0;
  return static_cast<double>(assigned_count_) / static_cast<double>(labels_.size());
}

namespace assign {

namespace {

TransportPlan run_batches(const CostMatrix& cost, const BatchSchedule& schedule,
                          const SolverConfig& cfg, bool partial) {
  schedule.validate();
  cfg.validate();
  if (partial && !cfg.mass_p) fail(ErrorKind::Input, "partial assignment requires p");

  const std::size_t n = cost.rows();
  const Marginal labels = Marginal::uniform(cost.cols());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool single_batch = schedule.batch_size >= n;
  std::mt19937_64 rng(schedule.shuffle_seed);

  TransportPlan global;
  global.values = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cost.cols()));
  global.converged = true;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    if (!single_batch) std::shuffle(order.begin(), order.end(), rng);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += schedule.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + schedule.batch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      TransportPlan part;
      try {
        const CostMatrix sub = single_batch ? cost : cost.select_rows(rows);
        const Marginal docs = Marginal::uniform(rows.size());
        part = partial ? ot::sinkhorn_partial(sub, docs, labels, cfg)
                       : ot::sinkhorn_complete(sub, docs, labels, cfg);
      } catch (const Error& e) {
        std::ostringstream os;
        os << "epoch " << epoch << ", batch " << batch_index;
        rethrow_with_context(e, os.str());
      }
      for (std::size_t k = 0; k < rows.size(); ++k) {
        global.values.row(static_cast<Eigen::Index>(rows[k])) +=
            part.values.row(static_cast<Eigen::Index>(k));
      }
      global.converged = global.converged && part.converged;
      global.iterations += part.iterations;
      global.residual = std::max(global.residual, part.residual);
    }
  }

  const double target = partial ? *cfg.mass_p : 1.0;
  const double total = global.values.sum();
  if (total > 0.0) global.values *= target / total;
  global.total_mass = global.values.sum();
  return global;
}

std::size_t row_argmax(const Matrix& values, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < values.cols(); ++j) {
    if (values(i, j) > values(i, best)) best = j;
  }
  return static_cast<std::size_t>(best);
}

}  // namespace

TransportPlan batched_complete_assign(const CostMatrix& cost, const BatchSchedule& schedule,
                                      const SolverConfig& cfg) {
  SolverConfig complete = cfg;
  complete.mass_p.reset();
  return run_batches(cost, schedule, complete, false);
}

TransportPlan batched_partial_assign(const CostMatrix& cost, const BatchSchedule& schedule,
                                     const SolverConfig& cfg) {
  return run_batches(cost, schedule, cfg, true);
}

Clustering harden_complete(const TransportPlan& plan) {
  std::vector<std::int32_t> labels(plan.rows());
  for (Eigen::Index i = 0; i < plan.values.rows(); ++i) {
    if (!(plan.values.row(i).maxCoeff() > 0.0)) {
      std::ostringstream os;
      os << "plan row " << i << " carries no mass; cannot pick a label";
      fail(ErrorKind::Hardening, os.str());
    }
    labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(row_argmax(plan.values, i));
  }
  return Clustering(std::move(labels));
}

std::size_t partial_keep_count(std::size_t n, double p) {
  if (!(p > 0.0 && p <= 1.0)) {
    std::ostringstream os;
    os << "p = " << p << " is outside (0, 1]";
    fail(ErrorKind::Input, os.str());
  }
  const double exact = p * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::floor(exact + 1e-9)));
}

Clustering harden_partial(const TransportPlan& plan, double p) {
  const std::size_t n = plan.rows();
  const std::size_t keep = partial_keep_count(n, p);
  const Vector mass = plan.values.rowwise().sum();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return mass(static_cast<Eigen::Index>(x)) > mass(static_cast<Eigen::Index>(y));
  });

  std::vector<std::int32_t> labels(n, kUnassigned);
  for (std::size_t k = 0; k < keep; ++k) {
    const std::size_t i = order[k];
    labels[i] = static_cast<std::int32_t>(row_argmax(plan.values, static_cast<Eigen::Index>(i)));
  }
  return Clustering(std::move(labels));
}

Clustering nearest_label(const CostMatrix& cost) {
  std::vector<std::int32_t> labels(cost.rows());
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cost.cols(); ++j) {
      if (cost(i, j) < cost(i, best)) best = j;
    }
    labels[i] = static_cast<std::int32_t>(best);
  }
  return Clustering(std::move(labels));
}

}  // namespace assign
}  // namespace edtm
