#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "edtm/assignment.hpp"

namespace edtm {

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> gold_label;
};

// One JSON object per line: {"id": str, "text": str, "gold_label"?: str}.
// Blank lines are skipped; errors name the 1-based line.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> documents);

  static Corpus parse_jsonl(std::string_view text);
  static Corpus load(const std::filesystem::path& path);
  std::string to_jsonl() const;

  std::size_t size() const { return documents_.size(); }
  const Document& operator[](std::size_t i) const { return documents_[i]; }
  const std::vector<Document>& documents() const { return documents_; }
  std::optional<std::size_t> find(std::string_view id) const;
  bool has_gold() const;

 private:
  std::vector<Document> documents_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kLabelPlaceholder = "LABEL";

struct LabelSpec {
  std::string id;
  std::string name;
  std::vector<std::string> description_terms;
  std::vector<std::string> seed_doc_ids;
  // Falls back to the run's default template when absent.
  std::optional<std::string> label_template;
};

void to_json(nlohmann::json& j, const LabelSpec& spec);
void from_json(const nlohmann::json& j, LabelSpec& spec);

std::vector<LabelSpec> parse_labels(std::string_view json_text);
std::vector<LabelSpec> load_labels(const std::filesystem::path& path);
// Non-empty names, unique ids; with a corpus, every seed id must exist.
void validate_labels(const std::vector<LabelSpec>& labels, const Corpus* corpus = nullptr);

// Clustering keyed by document id, label by label id (nullopt: unassigned).
// Serialized as JSONL lines {"id": str, "label": str|null}.
struct NamedClustering {
  std::vector<std::string> doc_ids;
  std::vector<std::optional<std::string>> labels;

  std::string to_jsonl() const;
  static NamedClustering parse_jsonl(std::string_view text);
  static NamedClustering load(const std::filesystem::path& path);
};

NamedClustering name_clustering(const Clustering& clustering, const Corpus& corpus,
                                const std::vector<LabelSpec>& labels);

// Interns label strings (first-seen order, appended to `universe`) and maps
// `named` onto `order` of document ids. Documents missing from `named` come
// out unassigned.
Clustering index_clustering(const NamedClustering& named, const std::vector<std::string>& order,
                            std::vector<std::string>& universe);

// Gold labels of the corpus as a clustering over interned label strings.
Clustering gold_clustering(const Corpus& corpus, std::vector<std::string>& universe);

}  // namespace edtm
