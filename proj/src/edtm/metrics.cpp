#include "edtm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "edtm/error.hpp"

namespace edtm {

ContingencyTable::ContingencyTable(std::size_t predicted, std::size_t gold)
    : rows_(predicted), cols_(gold), counts_(predicted * gold, 0) {}

ContingencyTable ContingencyTable::from_labels(const std::vector<std::int32_t>& predicted,
                                               const std::vector<std::int32_t>& gold) {
  if (predicted.size() != gold.size()) {
    std::ostringstream os;
    os << "predicted clustering covers " << predicted.size() << " documents, gold covers "
       << gold.size();
    fail(ErrorKind::Input, os.str());
  }
  std::int32_t max_pred = -1, max_gold = -1;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    max_pred = std::max(max_pred, predicted[i]);
    max_gold = std::max(max_gold, gold[i]);
  }
  ContingencyTable table(static_cast<std::size_t>(max_pred + 1),
                         static_cast<std::size_t>(max_gold + 1));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == kUnassigned || gold[i] == kUnassigned) continue;
    table.add(static_cast<std::size_t>(predicted[i]), static_cast<std::size_t>(gold[i]));
  }
  return table;
}

void ContingencyTable::add(std::size_t predicted, std::size_t gold, std::int64_t count) {
  if (predicted >= rows_ || gold >= cols_) fail(ErrorKind::Input, "contingency index out of range");
  if (count < 0) fail(ErrorKind::Input, "negative contingency count");
  counts_[predicted * cols_ + gold] += count;
  total_ += count;
}

std::vector<std::int64_t> ContingencyTable::predicted_sizes() const {
  std::vector<std::int64_t> out(rows_, 0);
  for (std::size_t k = 0; k < rows_; ++k)
    for (std::size_t j = 0; j < cols_; ++j) out[k] += (*this)(k, j);
  return out;
}

std::vector<std::int64_t> ContingencyTable::gold_sizes() const {
  std::vector<std::int64_t> out(cols_, 0);
  for (std::size_t k = 0; k < rows_; ++k)
    for (std::size_t j = 0; j < cols_; ++j) out[j] += (*this)(k, j);
  return out;
}

ContingencyTable ContingencyTable::transposed() const {
  ContingencyTable out(cols_, rows_);
  for (std::size_t k = 0; k < rows_; ++k)
    for (std::size_t j = 0; j < cols_; ++j)
      if ((*this)(k, j) > 0) out.add(j, k, (*this)(k, j));
  return out;
}

namespace metrics {

namespace {

void require_nonempty(const ContingencyTable& table) {
  if (table.total() <= 0) fail(ErrorKind::Evaluation, "contingency table is empty");
}

double entropy(const std::vector<std::int64_t>& sizes, std::int64_t total) {
  const double n = static_cast<double>(total);
  double h = 0.0;
  for (std::int64_t s : sizes) {
    if (s == 0) continue;
    const double q = static_cast<double>(s) / n;
    h -= q * std::log(q);
  }
  return h;
}

}  // namespace

std::int64_t purity_hits(const ContingencyTable& table) {
  std::int64_t hits = 0;
  for (std::size_t k = 0; k < table.predicted_clusters(); ++k) {
    std::int64_t best = 0;
    for (std::size_t j = 0; j < table.gold_clusters(); ++j) best = std::max(best, table(k, j));
    hits += best;
  }
  return hits;
}

std::int64_t inverse_purity_hits(const ContingencyTable& table) {
  std::int64_t hits = 0;
  for (std::size_t j = 0; j < table.gold_clusters(); ++j) {
    std::int64_t best = 0;
    for (std::size_t k = 0; k < table.predicted_clusters(); ++k) best = std::max(best, table(k, j));
    hits += best;
  }
  return hits;
}

double purity(const ContingencyTable& table) {
  require_nonempty(table);
  return static_cast<double>(purity_hits(table)) / static_cast<double>(table.total());
}

double inverse_purity(const ContingencyTable& table) {
  require_nonempty(table);
  return static_cast<double>(inverse_purity_hits(table)) / static_cast<double>(table.total());
}

double p1(const ContingencyTable& table) {
  const double p = purity(table);
  const double ip = inverse_purity(table);
  return 2.0 * p * ip / (p + ip);
}

double mutual_information(const ContingencyTable& table) {
  require_nonempty(table);
  const auto rows = table.predicted_sizes();
  const auto cols = table.gold_sizes();
  const double n = static_cast<double>(table.total());
  double mi = 0.0;
  for (std::size_t k = 0; k < table.predicted_clusters(); ++k) {
    for (std::size_t j = 0; j < table.gold_clusters(); ++j) {
      const std::int64_t c = table(k, j);
      if (c == 0) continue;
      const double joint = static_cast<double>(c) / n;
      mi += joint * std::log(static_cast<double>(c) * n /
                             (static_cast<double>(rows[k]) * static_cast<double>(cols[j])));
    }
  }
  return std::max(0.0, mi);
}

double predicted_entropy(const ContingencyTable& table) {
  require_nonempty(table);
  return entropy(table.predicted_sizes(), table.total());
}

double gold_entropy(const ContingencyTable& table) {
  require_nonempty(table);
  return entropy(table.gold_sizes(), table.total());
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"purity", r.purity},
                     {"inverse_purity", r.inverse_purity},
                     {"p1", r.p1},
                     {"mi_nats", r.mi_nats},
                     {"assigned_fraction", r.assigned_fraction},
                     {"n_evaluated", r.n_evaluated}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("purity").get_to(r.purity);
  j.at("inverse_purity").get_to(r.inverse_purity);
  j.at("p1").get_to(r.p1);
  j.at("mi_nats").get_to(r.mi_nats);
  j.at("assigned_fraction").get_to(r.assigned_fraction);
  j.at("n_evaluated").get_to(r.n_evaluated);
}

MetricsReport evaluate(const Clustering& predicted, const Clustering& gold) {
  const auto table = ContingencyTable::from_labels(predicted.labels(), gold.labels());
  if (table.total() == 0) {
    fail(ErrorKind::Evaluation, "no document is assigned in both clusterings; nothing to evaluate");
  }
  MetricsReport r;
  r.purity = purity(table);
  r.inverse_purity = inverse_purity(table);
  r.p1 = p1(table);
  r.mi_nats = mutual_information(table);
  r.assigned_fraction = predicted.assigned_fraction();
  r.n_evaluated = static_cast<std::size_t>(table.total());
  return r;
}

}  // namespace metrics
}  // namespace edtm
