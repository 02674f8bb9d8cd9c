#include "edtm/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "edtm/error.hpp"
#include "edtm/io.hpp"

namespace edtm {

namespace {

using nlohmann::json;

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) fn(line_no, line);
    if (end == text.size()) break;
    start = end + 1;
  }
}

[[noreturn]] void bad_line(std::size_t line_no, const std::string& why) {
  std::ostringstream os;
  os << "line " << line_no << ": " << why;
  fail(ErrorKind::Input, os.str());
}

std::string required_string(const json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end()) bad_line(line_no, std::string("missing field \"") + key + "\"");
  if (!it->is_string()) bad_line(line_no, std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

Corpus::Corpus(std::vector<Document> documents) : documents_(std::move(documents)) {
  for (std::size_t i = 0; i < documents_.size(); ++i) {
    if (documents_[i].id.empty()) fail(ErrorKind::Input, "document " + std::to_string(i) + " has an empty id");
    if (!index_.emplace(documents_[i].id, i).second) {
      fail(ErrorKind::Input, "duplicate document id \"" + documents_[i].id + "\"");
    }
  }
}

Corpus Corpus::parse_jsonl(std::string_view text) {
  std::vector<Document> docs;
  std::unordered_map<std::string, std::size_t> first_seen;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      bad_line(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) bad_line(line_no, "expected a JSON object");
    Document d;
    d.id = required_string(obj, "id", line_no);
    d.text = required_string(obj, "text", line_no);
    if (d.id.empty()) bad_line(line_no, "empty document id");
    if (auto it = obj.find("gold_label"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) bad_line(line_no, "field \"gold_label\" must be a string");
      d.gold_label = it->get<std::string>();
    }
    if (auto [pos, fresh] = first_seen.emplace(d.id, line_no); !fresh) {
      bad_line(line_no, "duplicate document id \"" + d.id + "\" (first on line " +
                            std::to_string(pos->second) + ")");
    }
    docs.push_back(std::move(d));
  });
  if (docs.empty()) fail(ErrorKind::Input, "corpus contains no documents");
  return Corpus(std::move(docs));
}

Corpus Corpus::load(const std::filesystem::path& path) {
  try {
    return parse_jsonl(io::read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

std::string Corpus::to_jsonl() const {
  std::string out;
  for (const auto& d : documents_) {
    json obj{{"id", d.id}, {"text", d.text}};
    if (d.gold_label) obj["gold_label"] = *d.gold_label;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Corpus::has_gold() const {
  return !documents_.empty() &&
         std::all_of(documents_.begin(), documents_.end(),
                     [](const Document& d) { return d.gold_label.has_value(); });
}

void to_json(json& j, const LabelSpec& spec) {
  j = json{{"id", spec.id}, {"name", spec.name}};
  if (!spec.description_terms.empty()) j["description_terms"] = spec.description_terms;
  if (!spec.seed_doc_ids.empty()) j["seed_doc_ids"] = spec.seed_doc_ids;
  if (spec.label_template) j["template"] = *spec.label_template;
}

void from_json(const json& j, LabelSpec& spec) {
  if (!j.is_object()) fail(ErrorKind::Input, "label spec must be a JSON object");
  auto string_field = [&](const char* key) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) fail(ErrorKind::Input, std::string("label field \"") + key + "\" must be a string");
    return it->get<std::string>();
  };
  auto list_field = [&](const char* key) {
    std::vector<std::string> out;
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return out;
    if (!it->is_array()) fail(ErrorKind::Input, std::string("label field \"") + key + "\" must be an array");
    for (const auto& v : *it) {
      if (!v.is_string()) fail(ErrorKind::Input, std::string("label field \"") + key + "\" must hold strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  };
  spec.name = string_field("name").value_or("");
  spec.id = string_field("id").value_or(spec.name);
  spec.description_terms = list_field("description_terms");
  spec.seed_doc_ids = list_field("seed_doc_ids");
  spec.label_template = string_field("template");
}

std::vector<LabelSpec> parse_labels(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Input, std::string("labels: malformed JSON: ") + e.what());
  }
  if (!doc.is_array()) fail(ErrorKind::Input, "labels: expected a JSON array of label specs");
  std::vector<LabelSpec> out;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    try {
      out.push_back(doc[k].get<LabelSpec>());
    } catch (const Error& e) {
      rethrow_with_context(e, "label " + std::to_string(k));
    }
  }
  validate_labels(out);
  return out;
}

std::vector<LabelSpec> load_labels(const std::filesystem::path& path) {
  try {
    return parse_labels(io::read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

void validate_labels(const std::vector<LabelSpec>& labels, const Corpus* corpus) {
  if (labels.empty()) fail(ErrorKind::Input, "label set is empty");
  std::set<std::string> ids;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto& spec = labels[k];
    if (spec.name.empty()) fail(ErrorKind::Input, "label " + std::to_string(k) + " has an empty name");
    if (spec.id.empty()) fail(ErrorKind::Input, "label " + std::to_string(k) + " has an empty id");
    if (!ids.insert(spec.id).second) fail(ErrorKind::Input, "duplicate label id \"" + spec.id + "\"");
    if (spec.label_template && spec.label_template->find(kLabelPlaceholder) == std::string::npos) {
      fail(ErrorKind::Config, "template of label \"" + spec.id + "\" lacks the LABEL placeholder");
    }
    if (corpus) {
      for (const auto& seed : spec.seed_doc_ids) {
        if (!corpus->find(seed)) {
          fail(ErrorKind::Input, "label \"" + spec.id + "\" references unknown seed document \"" + seed + "\"");
        }
      }
    }
  }
}

std::string NamedClustering::to_jsonl() const {
  std::string out;
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    json obj{{"id", doc_ids[i]}, {"label", nullptr}};
    if (labels[i]) obj["label"] = *labels[i];
    out += obj.dump();
    out += '\n';
  }
  return out;
}

NamedClustering NamedClustering::parse_jsonl(std::string_view text) {
  NamedClustering out;
  std::set<std::string> seen;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      bad_line(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) bad_line(line_no, "expected a JSON object");
    std::string id = required_string(obj, "id", line_no);
    if (!seen.insert(id).second) bad_line(line_no, "duplicate document id \"" + id + "\"");
    auto it = obj.find("label");
    if (it == obj.end()) bad_line(line_no, "missing field \"label\"");
    if (!it->is_null() && !it->is_string()) bad_line(line_no, "field \"label\" must be a string or null");
    out.doc_ids.push_back(std::move(id));
    out.labels.push_back(it->is_null() ? std::nullopt : std::optional<std::string>(it->get<std::string>()));
  });
  return out;
}

NamedClustering NamedClustering::load(const std::filesystem::path& path) {
  try {
    return parse_jsonl(io::read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

NamedClustering name_clustering(const Clustering& clustering, const Corpus& corpus,
                                const std::vector<LabelSpec>& labels) {
  if (clustering.size() != corpus.size()) {
    fail(ErrorKind::Input, "clustering size does not match the corpus");
  }
  NamedClustering out;
  for (std::size_t i = 0; i < clustering.size(); ++i) {
    out.doc_ids.push_back(corpus[i].id);
    if (clustering.assigned(i)) {
      const auto l = static_cast<std::size_t>(clustering[i]);
      if (l >= labels.size()) fail(ErrorKind::Input, "clustering references an unknown label index");
      out.labels.emplace_back(labels[l].id);
    } else {
      out.labels.emplace_back(std::nullopt);
    }
  }
  return out;
}

Clustering index_clustering(const NamedClustering& named, const std::vector<std::string>& order,
                            std::vector<std::string>& universe) {
  std::unordered_map<std::string, std::int32_t> ids;
  for (std::size_t k = 0; k < universe.size(); ++k) ids.emplace(universe[k], static_cast<std::int32_t>(k));
  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < named.doc_ids.size(); ++i) row.emplace(named.doc_ids[i], i);

  std::vector<std::int32_t> out(order.size(), kUnassigned);
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto it = row.find(order[i]);
    if (it == row.end() || !named.labels[it->second]) continue;
    const std::string& label = *named.labels[it->second];
    auto [pos, fresh] = ids.emplace(label, static_cast<std::int32_t>(universe.size()));
    if (fresh) universe.push_back(label);
    out[i] = pos->second;
  }
  return Clustering(std::move(out));
}

Clustering gold_clustering(const Corpus& corpus, std::vector<std::string>& universe) {
  NamedClustering named;
  std::vector<std::string> order;
  for (const auto& d : corpus.documents()) {
    named.doc_ids.push_back(d.id);
    named.labels.push_back(d.gold_label);
    order.push_back(d.id);
  }
  return index_clustering(named, order, universe);
}

}  // namespace edtm
