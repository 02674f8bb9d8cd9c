#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "edtm/ot.hpp"

namespace edtm {

struct BatchSchedule {
  std::size_t batch_size = 500;
  std::size_t epochs = 3;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

inline constexpr std::int32_t kUnassigned = -1;

// Hard document -> label assignment by index; kUnassigned marks documents a
// partial assignment withheld.
class Clustering {
 public:
  Clustering() = default;
  explicit Clustering(std::vector<std::int32_t> labels);

  std::size_t size() const { return labels_.size(); }
  std::int32_t operator[](std::size_t i) const { return labels_[i]; }
  bool assigned(std::size_t i) const { return labels_[i] != kUnassigned; }
  const std::vector<std::int32_t>& labels() const { return labels_; }

  std::size_t assigned_count() const { return assigned_count_; }
  double assigned_fraction() const;

  bool operator==(const Clustering& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::int32_t> labels_;
  std::size_t assigned_count_ = 0;
};

namespace assign {

// Batched complete assignment: every epoch reshuffles the rows with a seeded
// generator, splits them into batches, solves each batch against uniform row
// and label marginals, and adds the batch plan into the global plan. The
// result is normalized to unit mass. A schedule whose batch covers every row
// solves the unshuffled full problem once per epoch.
TransportPlan batched_complete_assign(const CostMatrix& cost, const BatchSchedule& schedule,
                                      const SolverConfig& cfg);

// Same batching with a partial solve of mass cfg.mass_p per batch; the
// accumulated plan is normalized to mass p.
TransportPlan batched_partial_assign(const CostMatrix& cost, const BatchSchedule& schedule,
                                     const SolverConfig& cfg);

// Row-wise argmax, lowest label index on ties. Throws a hardening error on an
// all-zero row.
Clustering harden_complete(const TransportPlan& plan);

// Keeps the floor(p * n) documents with the largest plan row mass (lower
// document index on ties) and assigns each its row-wise argmax.
Clustering harden_partial(const TransportPlan& plan, double p);

// floor(p * n), guarded against p * n landing a rounding error below an
// integer.
std::size_t partial_keep_count(std::size_t n, double p);

// Greedy baseline: row-wise argmin of the cost, lowest index on ties.
Clustering nearest_label(const CostMatrix& cost);

}  // namespace assign
}  // namespace edtm
