#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "edtm/ot.hpp"

namespace edtm {

struct ProviderConfig {
  std::string kind = "file";  // "file" | "remote"

  // file: matrix files in the EDTM format
  std::filesystem::path documents;
  std::filesystem::path labels;
  std::filesystem::path scores;

  // remote: POST {"texts": [...]} -> {"vectors": [[...], ...]} at `endpoint`;
  // POST {"queries": [...], "texts": [...]} -> {"scores": [[...], ...]} at
  // `scores_endpoint` (one row per text, one column per query).
  std::string endpoint;
  std::string scores_endpoint;
  std::string auth_header;
  std::string auth_value;
  std::string auth_env;  // environment variable holding the auth value
  std::size_t chunk_size = 64;
  std::size_t max_parallel = 4;
  std::size_t attempts = 3;
  int backoff_ms = 200;
  int timeout_s = 60;

  // Empty disables the on-disk cache.
  std::filesystem::path cache_dir;
};

void to_json(nlohmann::json& j, const ProviderConfig& c);
void from_json(const nlohmann::json& j, ProviderConfig& c);

class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  // One row per text, in order.
  virtual Matrix embed(const std::vector<std::string>& texts) = 0;
  // Stable description of where vectors come from; part of cache keys.
  virtual std::string identity() const = 0;
};

// Returns the stored matrix; its row count must match the request.
class MatrixFileSource final : public EmbeddingSource {
 public:
  explicit MatrixFileSource(std::filesystem::path path);
  Matrix embed(const std::vector<std::string>& texts) override;
  std::string identity() const override;

 private:
  std::filesystem::path path_;
};

struct HttpEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;

  static HttpEndpoint parse(const std::string& url);
};

class RemoteEmbeddingSource final : public EmbeddingSource {
 public:
  explicit RemoteEmbeddingSource(ProviderConfig config);
  Matrix embed(const std::vector<std::string>& texts) override;
  std::string identity() const override;

  // HTTP requests issued so far, retries included.
  std::size_t requests() const { return requests_.load(); }

 private:
  ProviderConfig config_;
  HttpEndpoint endpoint_;
  std::atomic<std::size_t> requests_{0};
};

// Content-addressed disk cache in front of another source: one matrix file per
// distinct (source identity, text list), named by its SHA-256.
class CachedEmbeddingSource final : public EmbeddingSource {
 public:
  CachedEmbeddingSource(std::shared_ptr<EmbeddingSource> inner, std::filesystem::path dir);
  Matrix embed(const std::vector<std::string>& texts) override;
  std::string identity() const override { return inner_->identity(); }

  std::filesystem::path entry_path(const std::vector<std::string>& texts) const;
  std::size_t hits() const { return hits_.load(); }

 private:
  std::shared_ptr<EmbeddingSource> inner_;
  std::filesystem::path dir_;
  std::atomic<std::size_t> hits_{0};
};

enum class EmbeddingRole { Documents, Labels };

// File sources read `documents` or `labels` by role; remote sources embed the
// given texts. Remote sources are cached when cache_dir is set.
std::shared_ptr<EmbeddingSource> make_embedding_source(const ProviderConfig& config, EmbeddingRole role);

Matrix fetch_embeddings(const std::vector<std::string>& texts, EmbeddingSource& source);

// Relevance scores, one row per document text and one column per label text.
Matrix fetch_scores(const std::vector<std::string>& doc_texts,
                    const std::vector<std::string>& label_texts, const ProviderConfig& config);

std::string sha256_hex(std::string_view bytes);

}  // namespace edtm
