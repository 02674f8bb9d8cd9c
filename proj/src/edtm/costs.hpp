#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "edtm/corpus.hpp"
#include "edtm/ot.hpp"

namespace edtm {

// One vector per row. Entries must be finite.
class EmbeddingMatrix {
 public:
  explicit EmbeddingMatrix(Matrix values);

  std::size_t count() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

// Document x label relevance probabilities in [0, 1]; every row needs a
// positive entry.
class ScoreMatrix {
 public:
  explicit ScoreMatrix(Matrix values);

  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

namespace costs {

inline constexpr std::size_t kDefaultTokenBudget = 450;
inline constexpr std::size_t kDefaultSeedCount = 5;
inline constexpr std::string_view kDefaultTemplate = "LABEL";

// Prefix of `text` holding its first `budget` whitespace-separated tokens.
std::string truncate_tokens(std::string_view text, std::size_t budget = kDefaultTokenBudget);

// Fills the template's LABEL placeholder with the name, followed by
// " or <term>" for each description term.
std::string render_label(const LabelSpec& spec, std::string_view default_template = kDefaultTemplate);

// Euclidean distances between every document and label vector.
CostMatrix l2_costs(const EmbeddingMatrix& docs, const EmbeddingMatrix& labels);

// 1 - score / row max: each row's best label costs exactly 0.
CostMatrix ce_costs(const ScoreMatrix& scores);

// Label vector = mean of the embeddings of the label's first min(k, |seeds|)
// seed documents.
EmbeddingMatrix seed_doc_label_embeddings(const EmbeddingMatrix& docs, const Corpus& corpus,
                                          const std::vector<LabelSpec>& specs,
                                          std::size_t k = kDefaultSeedCount);

}  // namespace costs
}  // namespace edtm
