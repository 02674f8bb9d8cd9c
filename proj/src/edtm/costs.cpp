#include "edtm/costs.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "edtm/error.hpp"

namespace edtm {

EmbeddingMatrix::EmbeddingMatrix(Matrix values) : values_(std::move(values)) {
  if (!values_.allFinite()) fail(ErrorKind::Input, "embedding matrix contains non-finite entries");
}

ScoreMatrix::ScoreMatrix(Matrix values) : values_(std::move(values)) {
  for (Eigen::Index i = 0; i < values_.rows(); ++i) {
    double best = 0.0;
    for (Eigen::Index j = 0; j < values_.cols(); ++j) {
      const double s = values_(i, j);
      if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
        std::ostringstream os;
        os << "score (" << i << ", " << j << ") = " << s << " is not a probability";
        fail(ErrorKind::Provider, os.str());
      }
      best = std::max(best, s);
    }
    if (!(best > 0.0)) {
      fail(ErrorKind::Provider, "document " + std::to_string(i) + " has zero relevance to every label");
    }
  }
}

namespace costs {

std::string truncate_tokens(std::string_view text, std::size_t budget) {
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::size_t tokens = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    if (i == text.size()) break;
    if (tokens == budget) return std::string(text.substr(0, i));
    while (i < text.size() && !space(text[i])) ++i;
    ++tokens;
  }
  return std::string(text);
}

std::string render_label(const LabelSpec& spec, std::string_view default_template) {
  const std::string_view tmpl = spec.label_template ? std::string_view(*spec.label_template)
                                                    : default_template;
  std::string filler = spec.name;
  for (const auto& term : spec.description_terms) {
    filler += " or ";
    filler += term;
  }
  std::string out;
  std::size_t pos = 0;
  bool found = false;
  while (true) {
    const std::size_t hit = tmpl.find(kLabelPlaceholder, pos);
    if (hit == std::string_view::npos) break;
    found = true;
    out.append(tmpl.substr(pos, hit - pos));
    out += filler;
    pos = hit + kLabelPlaceholder.size();
  }
  if (!found) {
    fail(ErrorKind::Config, "label template \"" + std::string(tmpl) + "\" lacks the LABEL placeholder");
  }
  out.append(tmpl.substr(pos));
  return out;
}

CostMatrix l2_costs(const EmbeddingMatrix& docs, const EmbeddingMatrix& labels) {
  if (docs.dim() != labels.dim()) {
    std::ostringstream os;
    os << "document vectors have dimension " << docs.dim() << ", label vectors " << labels.dim();
    fail(ErrorKind::Input, os.str());
  }
  const Matrix& d = docs.values();
  const Matrix& l = labels.values();
  Matrix out(d.rows(), l.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < l.rows(); ++j) out(i, j) = (d.row(i) - l.row(j)).norm();
  }
  return CostMatrix(std::move(out));
}

CostMatrix ce_costs(const ScoreMatrix& scores) {
  const Matrix& s = scores.values();
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double best = s.row(i).maxCoeff();
    for (Eigen::Index j = 0; j < s.cols(); ++j) out(i, j) = 1.0 - s(i, j) / best;
  }
  return CostMatrix(std::move(out));
}

EmbeddingMatrix seed_doc_label_embeddings(const EmbeddingMatrix& docs, const Corpus& corpus,
                                          const std::vector<LabelSpec>& specs, std::size_t k) {
  if (k < 1) fail(ErrorKind::Input, "seed document count k must be at least 1");
  if (docs.count() != corpus.size()) {
    fail(ErrorKind::Input, "document embeddings do not match the corpus size");
  }
  Matrix out(static_cast<Eigen::Index>(specs.size()), static_cast<Eigen::Index>(docs.dim()));
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& seeds = specs[l].seed_doc_ids;
    if (seeds.empty()) {
      fail(ErrorKind::Input, "label \"" + specs[l].id + "\" has no seed documents");
    }
    const std::size_t used = std::min(k, seeds.size());
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(docs.dim()));
    for (std::size_t s = 0; s < used; ++s) {
      const auto row = corpus.find(seeds[s]);
      if (!row) {
        fail(ErrorKind::Input, "label \"" + specs[l].id + "\" references unknown seed document \"" +
                                   seeds[s] + "\"");
      }
      sum += docs.values().row(static_cast<Eigen::Index>(*row)).transpose();
    }
    out.row(static_cast<Eigen::Index>(l)) = (sum / static_cast<double>(used)).transpose();
  }
  return EmbeddingMatrix(std::move(out));
}

}  // namespace costs
}  // namespace edtm
