#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "edtm/assignment.hpp"

namespace edtm {

// Counts indexed by (predicted cluster, gold cluster). Rows or columns of
// zeros are allowed and contribute nothing to any metric.
class ContingencyTable {
 public:
  ContingencyTable(std::size_t predicted, std::size_t gold);

  // Pairs where either side is kUnassigned are skipped.
  static ContingencyTable from_labels(const std::vector<std::int32_t>& predicted,
                                      const std::vector<std::int32_t>& gold);

  void add(std::size_t predicted, std::size_t gold, std::int64_t count = 1);

  std::size_t predicted_clusters() const { return rows_; }
  std::size_t gold_clusters() const { return cols_; }
  std::int64_t operator()(std::size_t k, std::size_t j) const { return counts_[k * cols_ + j]; }
  std::int64_t total() const { return total_; }

  std::vector<std::int64_t> predicted_sizes() const;
  std::vector<std::int64_t> gold_sizes() const;
  ContingencyTable transposed() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

namespace metrics {

// Sum over predicted clusters of their largest gold overlap.
std::int64_t purity_hits(const ContingencyTable& table);
std::int64_t inverse_purity_hits(const ContingencyTable& table);

double purity(const ContingencyTable& table);
double inverse_purity(const ContingencyTable& table);
// Harmonic mean of purity and inverse purity.
double p1(const ContingencyTable& table);
// I(C, C') in nats.
double mutual_information(const ContingencyTable& table);
// Entropies of the predicted and gold marginals, in nats.
double predicted_entropy(const ContingencyTable& table);
double gold_entropy(const ContingencyTable& table);

struct MetricsReport {
  double purity = 0.0;
  double inverse_purity = 0.0;
  double p1 = 0.0;
  double mi_nats = 0.0;
  double assigned_fraction = 0.0;
  std::size_t n_evaluated = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

// Scores the documents assigned in `predicted`; unassigned documents (on
// either side) are left out. Throws an evaluation error when nothing is left.
MetricsReport evaluate(const Clustering& predicted, const Clustering& gold);

}  // namespace metrics
}  // namespace edtm
